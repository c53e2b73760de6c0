#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "eranet/io.hpp"
#include "eranet/phantom.hpp"

using namespace eranet;
using namespace eranet::io;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("eranet_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TensorErrorCode decode_code(std::vector<std::uint8_t> bytes) {
  try {
    decode_tensor(bytes);
  } catch (const TensorError& e) {
    return e.code();
  }
  return TensorErrorCode::Io;
}

}  // namespace

TEST(Tensor, HeaderLayoutForSmallU8) {
  Tensor t{{2, 3}, std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6}};
  const auto bytes = encode_tensor(t);
  ASSERT_EQ(bytes.size(), 15u + 6u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "ERAT");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 1);
  EXPECT_EQ(bytes[6], 2);
  EXPECT_EQ(bytes[7], 2);
  EXPECT_EQ(bytes[11], 3);
  EXPECT_EQ(bytes[15], 1);
}

TEST(Tensor, RoundTripsEveryDtype) {
  const std::vector<Tensor> ts{
      {{3}, std::vector<std::uint8_t>{0, 7, 255}},
      {{2, 2}, std::vector<float>{-1.5f, 0.0f, 3.25f, 1e-30f}},
      {{1, 2, 1}, std::vector<double>{3.141592653589793, -2e300}},
  };
  const fs::path dir = scratch("roundtrip");
  for (std::size_t i = 0; i < ts.size(); ++i) {
    EXPECT_EQ(decode_tensor(encode_tensor(ts[i])), ts[i]);
    const fs::path p = dir / ("t" + std::to_string(i) + ".erat");
    write_tensor(p, ts[i]);
    EXPECT_EQ(read_tensor(p), ts[i]);
  }
}

TEST(Tensor, ErrorsCarryDistinctCodes) {
  Tensor t{{2, 2}, std::vector<float>{1, 2, 3, 4}};
  const auto good = encode_tensor(t);

  auto truncated = good;
  truncated.pop_back();
  EXPECT_EQ(decode_code(truncated), TensorErrorCode::Truncated);
  EXPECT_EQ(decode_code({good.begin(), good.begin() + 6}), TensorErrorCode::Truncated);

  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(decode_code(magic), TensorErrorCode::BadMagic);

  auto dtype = good;
  dtype[5] = 9;
  EXPECT_EQ(decode_code(dtype), TensorErrorCode::UnknownDtype);

  auto version = good;
  version[4] = 2;
  EXPECT_EQ(decode_code(version), TensorErrorCode::UnsupportedVersion);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(decode_code(trailing), TensorErrorCode::TrailingBytes);

  try {
    read_tensor(scratch("missing") / "nope.erat");
    FAIL();
  } catch (const TensorError& e) {
    EXPECT_EQ(e.code(), TensorErrorCode::Io);
  }
}

TEST(Tensor, ImageAndMaskConversions) {
  Image2D img(2, 3, 0.25f);
  img.at(1, 2) = 0.75f;
  EXPECT_EQ(to_image(to_tensor(img)).data, img.data);
  ClassMask m(2, 3, 4);
  m.at(0, 1) = 3;
  EXPECT_EQ(to_mask(to_tensor(m), 4), m);
  EXPECT_EQ(to_mask(to_tensor(m)).num_classes, 4);
  EXPECT_THROW(to_image(Tensor{{1, 2, 3}, std::vector<float>(6)}), TensorError);
}

TEST(Files, AtomicWriteLeavesNoTemporaries) {
  const fs::path dir = scratch("atomic");
  write_text_atomic(dir / "a.txt", "one");
  write_text_atomic(dir / "a.txt", "two");
  EXPECT_EQ(read_text(dir / "a.txt"), "two");
  int n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++n;
  EXPECT_EQ(n, 1);
}

TEST(Files, PgmHeaderAndScaling) {
  const fs::path dir = scratch("pgm");
  Tensor t{{2, 2}, std::vector<float>{0.0f, 0.5f, 1.0f, 0.25f}};
  write_pgm(dir / "x.pgm", t);
  const auto bytes = read_file(dir / "x.pgm");
  const std::string header = "P5\n2 2\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + header.size()), header);
  EXPECT_EQ(bytes[header.size()], 0);
  EXPECT_EQ(bytes[header.size() + 2], 255);
}

TEST(Manifest, RoundTripAndValidation) {
  Manifest m;
  m.name = "demo";
  m.seed = 4;
  m.contrast = "dark";
  m.entries.push_back({"a", "images/a.erat", "labels/a.erat", Split::Train, true, false});
  m.entries.push_back({"b", "images/b.erat", "labels/b.erat", Split::Train, false, true});
  m.entries.push_back({"c", "images/c.erat", std::nullopt, Split::Test, false, false});
  const Manifest back = Manifest::from_json(m.to_json());
  EXPECT_EQ(back.to_json(), m.to_json());

  Manifest dup = m;
  dup.entries.push_back(m.entries[0]);
  EXPECT_THROW(dup.validate(), std::invalid_argument);
  Manifest nolabel = m;
  nolabel.entries[0].label.reset();
  EXPECT_THROW(nolabel.validate(), std::invalid_argument);
  Manifest labeled_test = m;
  labeled_test.entries[2].labeled = true;
  labeled_test.entries[2].label = "labels/c.erat";
  EXPECT_THROW(labeled_test.validate(), std::invalid_argument);
}

TEST(Manifest, DatasetSaveLoadPreservesSamples) {
  phantom::PhantomConfig cfg;
  cfg.size = 32;
  phantom::DatasetOptions opts;
  opts.count = 6;
  opts.test_count = 2;
  opts.labeled_fraction = 0.5;
  const Dataset d = phantom::make_dataset(cfg, opts);
  const fs::path dir = scratch("dataset");
  save_dataset(d, dir);
  const Dataset back = load_dataset(dir / "manifest.json");
  ASSERT_EQ(back.samples.size(), d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].id, d.samples[i].id);
    EXPECT_EQ(back.samples[i].image.data, d.samples[i].image.data);
    EXPECT_EQ(back.samples[i].label, d.samples[i].label);
    EXPECT_EQ(back.samples[i].labeled, d.samples[i].labeled);
    EXPECT_EQ(back.samples[i].split, d.samples[i].split);
  }
}

TEST(Checkpoint, RoundTripWithOptimizer) {
  Rng rng(1);
  const net::ModelParams p = net::init_params(4, 6, 4, rng);
  net::OptimizerState<float> st;
  st.step = 17;
  st.m.assign(p.values.size(), 0.5f);
  st.v.assign(p.values.size(), 0.25f);
  const fs::path dir = scratch("ckpt");
  save_checkpoint(dir / "c", p, {"u1", 40, 3, "abc"}, &st);
  const auto back = load_checkpoint(dir / "c");
  EXPECT_EQ(back.params, p);
  EXPECT_EQ(back.meta.stage, "u1");
  EXPECT_EQ(back.meta.epoch, 40);
  ASSERT_TRUE(back.optimizer);
  EXPECT_EQ(back.optimizer->step, 17);
  EXPECT_EQ(back.optimizer->m, st.m);

  save_checkpoint(dir / "d", p, {"baseline", 1, 1, ""});
  EXPECT_FALSE(load_checkpoint(dir / "d").optimizer);
}

TEST(Hash, IndependentOfKeyOrder) {
  const Json a = Json::parse(R"({"b": 1, "a": {"y": [1, 2], "x": "s"}})");
  const Json b = Json::parse(R"({"a": {"x": "s", "y": [1, 2]}, "b": 1})");
  EXPECT_EQ(canonical_json(a), canonical_json(b));
  EXPECT_EQ(hash_json(a), hash_json(b));
  EXPECT_EQ(hash_json(a).size(), 16u);
  EXPECT_NE(hash_json(a), hash_json(Json::parse(R"({"b": 2})")));
}
