#include <gtest/gtest.h>

#include <cmath>

#include "eranet/phantom.hpp"

using namespace eranet;
using namespace eranet::phantom;

TEST(Phantom, DeterministicInIdAndSeed) {
  PhantomConfig cfg;
  const auto a = generate_slice(cfg, "s0001", 7);
  const auto b = generate_slice(cfg, "s0001", 7);
  const auto c = generate_slice(cfg, "s0002", 7);
  EXPECT_EQ(a.image.data, b.image.data);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_NE(a.image.data, c.image.data);
}

TEST(Phantom, DeclaredTopologyMatchesClassifier) {
  PhantomConfig cfg;
  int type_b = 0;
  for (int i = 0; i < 60; ++i) {
    const auto r = generate_slice(cfg, "k" + std::to_string(i), 3);
    const auto t = era::classify_topology(era::meniscus_mask(r.mask, {kLateralMeniscus, kMedialMeniscus}),
                                          era::EraConfig{});
    EXPECT_EQ(t.kind, r.geometry.kind);
    type_b += r.geometry.kind == era::TopologyKind::TypeB;
  }
  EXPECT_GT(type_b, 10);
  EXPECT_LT(type_b, 50);
}

TEST(Phantom, MeniscusAndCartilageKeepBorderMargin) {
  for (int size : {32, 64, 96}) {
    PhantomConfig cfg;
    cfg.size = size;
    for (int i = 0; i < 30; ++i) {
      const auto r = generate_slice(cfg, "m" + std::to_string(i), 11);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const int v = r.mask.at(y, x);
          if (v == kLateralMeniscus || v == kMedialMeniscus) {
            EXPECT_GE(x, 2);
            EXPECT_LE(x, size - 3);
          }
          if (v != 0) {
            EXPECT_GE(y, 2);
            EXPECT_LE(y, size - 3);
          }
        }
      }
    }
  }
}

TEST(Phantom, NoiselessIntensitiesFollowLevels) {
  for (Contrast c : {Contrast::Bright, Contrast::Dark}) {
    PhantomConfig cfg;
    cfg.contrast = c;
    cfg.noise_std = 0.0;
    const Levels l = levels_for(c);
    for (int i = 0; i < 10; ++i) {
      const auto r = generate_slice(cfg, "n" + std::to_string(i), 5);
      for (std::size_t p = 0; p < r.mask.data.size(); ++p) {
        const float v = r.image.data[p];
        switch (r.mask.data[p]) {
          case kLateralMeniscus: EXPECT_FLOAT_EQ(v, l.lateral); break;
          case kMedialMeniscus: EXPECT_FLOAT_EQ(v, l.medial); break;
          case kTibialCartilage: EXPECT_FLOAT_EQ(v, l.cartilage); break;
          default: EXPECT_TRUE(std::abs(v - l.background) < 1e-6f || std::abs(v - l.bone) < 1e-6f) << v;
        }
      }
    }
  }
  const Levels dark = levels_for(Contrast::Dark);
  EXPECT_LT(dark.lateral, dark.background);
  EXPECT_LT(dark.medial, dark.lateral);
  const Levels bright = levels_for(Contrast::Bright);
  EXPECT_GT(bright.medial, bright.lateral);
  EXPECT_GT(bright.lateral, bright.background);
}

TEST(Phantom, InvalidConfigsRejected) {
  PhantomConfig cfg;
  cfg.size = 8;
  EXPECT_THROW(generate_slice(cfg, "x", 1), std::invalid_argument);
  cfg = PhantomConfig{};
  cfg.topology_mix = 1.5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_THROW(contrast_from_string("grey"), std::invalid_argument);
}

TEST(Dataset, LabeledCountRoundsUp) {
  EXPECT_EQ(labeled_count(60, 0.1), 6);
  EXPECT_EQ(labeled_count(60, 0.2), 12);
  EXPECT_EQ(labeled_count(60, 0.5), 30);
  EXPECT_EQ(labeled_count(7, 0.1), 1);
  EXPECT_EQ(labeled_count(10, 1.0), 10);
  EXPECT_EQ(labeled_count(0, 0.5), 0);
}

TEST(Dataset, SplitsIdsAndLabeledSubset) {
  PhantomConfig cfg;
  cfg.size = 32;
  DatasetOptions opts;
  opts.count = 20;
  opts.test_count = 5;
  opts.labeled_fraction = 0.2;
  const io::Dataset d = make_dataset(cfg, opts);
  EXPECT_EQ(d.samples.size(), 25u);
  EXPECT_EQ(d.labeled().size(), 4u);
  EXPECT_EQ(d.unlabeled().size(), 16u);
  EXPECT_EQ(d.test().size(), 5u);
  EXPECT_EQ(d.samples.front().id, "s0000");
  EXPECT_EQ(d.samples.back().id, "t0004");
  for (const auto* s : d.test()) EXPECT_FALSE(s->labeled);

  const io::Dataset again = make_dataset(cfg, opts);
  for (std::size_t i = 0; i < d.samples.size(); ++i) EXPECT_EQ(d.samples[i].labeled, again.samples[i].labeled);

  io::Dataset copy = d;
  assign_labeled(copy, 0.5, 99);
  EXPECT_EQ(copy.labeled().size(), 10u);
  EXPECT_THROW(assign_labeled(copy, 0.0, 1), std::invalid_argument);
}
