#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "eranet/pipeline.hpp"

using namespace eranet;
using namespace eranet::pipeline;

namespace {

RunConfig small_config() {
  RunConfig cfg;
  PhantomSource src;
  src.config.size = 32;
  src.options.count = 12;
  src.options.test_count = 4;
  src.options.labeled_fraction = 0.25;
  cfg.phantom = src;
  cfg.k = 4;
  cfg.d = 6;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 4;
  cfg.train.labeled_per_batch = 2;
  cfg.cst.checkpoints = 3;
  cfg.cst.threshold = 0.5;
  return cfg;
}

const io::Dataset& small_data() {
  static const io::Dataset d = resolve_dataset(small_config());
  return d;
}

std::vector<std::string> stage_names(const RunReport& r) {
  std::vector<std::string> out;
  for (const auto& s : r.stages) out.push_back(s.name);
  return out;
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

int count_fields(const std::string& line) {
  int n = 1;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    if (c == ',' && !quoted) ++n;
  }
  return n;
}

}  // namespace

TEST(Pipeline, FullRunIsDeterministicAndOrdered) {
  const auto a = run_pipeline(small_config(), small_data());
  const auto b = run_pipeline(small_config(), small_data());
  EXPECT_EQ(a.report.to_json(false).dump(), b.report.to_json(false).dump());
  EXPECT_EQ(stage_names(a.report), (std::vector<std::string>{"baseline", "u1", "u3", "u4"}));
  EXPECT_TRUE(a.report.provenance_valid);
  EXPECT_EQ(a.report.labeled, 3);
  EXPECT_EQ(a.report.unlabeled, 9);
  EXPECT_EQ(a.report.reliability.size(), 9u);
  EXPECT_EQ(a.u1_checkpoints.size(), 3u);
  EXPECT_EQ(a.report.stage("u4")->train_pairs, 12);
  const auto& u3 = a.report.provenance.at("u3");
  EXPECT_EQ(u3.at("ground_truth"), 3);
  int reliable = 0;
  for (const auto& r : a.report.reliability) reliable += r.assignment == cst::Assignment::Reliable;
  EXPECT_EQ(a.report.stage("u3")->train_pairs, 3 + reliable);
  for (const char* m : {"baseline", "u1", "u2", "u3", "u4"}) EXPECT_TRUE(a.models.count(m)) << m;
}

TEST(Pipeline, FeaturesOffWithFullLabelsReducesToBaseline) {
  RunConfig cfg = small_config();
  cfg.labeled_fraction = 1.0;
  cfg.era_u1 = cfg.era_u3 = false;
  cfg.cst_enabled = false;
  const auto r = run_pipeline(cfg, small_data());
  EXPECT_EQ(stage_names(r.report), (std::vector<std::string>{"baseline"}));

  const io::Dataset data = prepare_dataset(cfg, small_data());
  const auto plain = net::train_supervised(labeled_pairs(data), initial_params(cfg, data.num_classes),
                                           resolved_train(cfg, data), false, cfg.seed, "baseline");
  EXPECT_EQ(r.models.at("baseline"), plain.student);
}

TEST(Pipeline, SwitchesReachTheTrainers) {
  RunConfig cfg = small_config();
  cfg.train.use_pca = false;
  cfg.era_u1 = cfg.era_u3 = false;
  cfg.cst_enabled = false;
  const auto r = run_pipeline(cfg, small_data());
  const StageReport* u1 = r.report.stage("u1");
  ASSERT_TRUE(u1);
  for (const auto& e : u1->curve) EXPECT_EQ(e.mean.l_consis, 0.0);
  EXPECT_EQ(u1->era_applied, 0);

  cfg.era_u1 = true;
  cfg.train.use_pca = true;
  const auto on = run_pipeline(cfg, small_data());
  EXPECT_GT(on.report.stage("u1")->era_applied, 0);
  EXPECT_GT(on.report.stage("u1")->curve.back().mean.l_consis, 0.0);
}

TEST(Pipeline, NoLabeledDataIsAStageError) {
  io::Dataset d = small_data();
  for (auto& s : d.samples) s.labeled = false;
  try {
    run_pipeline(small_config(), d);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "setup");
  }
}

TEST(Config, JsonRoundTripAndHash) {
  RunConfig cfg = small_config();
  cfg.labeled_fraction = 0.5;
  cfg.train.lambda_override = 0.0;
  const RunConfig back = RunConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  EXPECT_EQ(back.hash(), cfg.hash());

  RunConfig moved = cfg;
  moved.output_dir = "/tmp/elsewhere";
  moved.dump_pgm = true;
  EXPECT_EQ(moved.hash(), cfg.hash());
  RunConfig other = cfg;
  other.seed = 2;
  EXPECT_NE(other.hash(), cfg.hash());

  const RunConfig paper = paper_settings();
  EXPECT_EQ(paper.train.epochs, 200);
  EXPECT_EQ(paper.train.batch_size, 8);
  EXPECT_DOUBLE_EQ(paper.cst.threshold, 0.8);
}

TEST(Ablation, AxisParsingAndSettings) {
  const auto a = parse_axis("ratio=1/10,1/5,1/2");
  EXPECT_EQ(a.name, "ratio");
  EXPECT_EQ(a.values.size(), 3u);
  EXPECT_THROW(parse_axis("ratio"), std::invalid_argument);
  EXPECT_THROW(parse_axis("ratio=0.1,,0.2"), std::invalid_argument);
  EXPECT_DOUBLE_EQ(*with_setting(RunConfig{}, "ratio", "1/5").labeled_fraction, 0.2);
  EXPECT_DOUBLE_EQ(*with_setting(RunConfig{}, "ratio", "0.5").labeled_fraction, 0.5);
  EXPECT_FALSE(with_setting(RunConfig{}, "era", "off").era_u1);
  EXPECT_FALSE(with_setting(RunConfig{}, "pca", "0").train.use_pca);
  EXPECT_THROW(with_setting(RunConfig{}, "colour", "red"), std::invalid_argument);
  EXPECT_THROW(with_setting(RunConfig{}, "era", "maybe"), std::invalid_argument);
}

TEST(Ablation, SinglePointGridMatchesDirectRun) {
  RunConfig cfg = small_config();
  cfg.cst_enabled = false;
  const auto grid = run_ablation(cfg, small_data(), {parse_axis("seed=1")});
  ASSERT_EQ(grid.runs.size(), 1u);
  ASSERT_TRUE(grid.runs[0].report);
  const auto direct = run_pipeline(cfg, small_data());
  EXPECT_EQ(grid.runs[0].report->to_json(false).dump(), direct.report.to_json(false).dump());
}

TEST(Ablation, GridOrderCsvShapeAndErrors) {
  RunConfig cfg = small_config();
  cfg.cst_enabled = false;
  cfg.era_u1 = false;
  const auto grid = run_ablation(cfg, small_data(), {parse_axis("ratio=1/4,1/2,bad"), parse_axis("epochs=1,2")}, 2);
  ASSERT_EQ(grid.runs.size(), 6u);
  EXPECT_EQ(grid.runs[0].settings, (std::vector<std::pair<std::string, std::string>>{{"ratio", "1/4"}, {"epochs", "1"}}));
  EXPECT_EQ(grid.runs[1].settings[1].second, "2");
  EXPECT_EQ(grid.runs[2].settings[0].second, "1/2");
  for (int i = 0; i < 4; ++i) EXPECT_TRUE(grid.runs[i].report) << i;
  for (int i = 4; i < 6; ++i) {
    EXPECT_FALSE(grid.runs[i].report);
    EXPECT_FALSE(grid.runs[i].error.empty());
  }

  const std::string csv = grid.csv();
  // header + 4 runs x 2 stages + 2 error rows
  EXPECT_EQ(count_lines(csv), 1 + 8 + 2);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  const int width = count_fields(line);
  EXPECT_EQ(width, 1 + 2 + 2 + 2 + 3 + 1 + 3 + 1 + 1);
  int errors = 0;
  while (std::getline(is, line)) {
    EXPECT_EQ(count_fields(line), width) << line;
    errors += line.find("error: ") != std::string::npos;
  }
  EXPECT_EQ(errors, 2);

  const Json j = grid.to_json(false);
  EXPECT_EQ(j.at("runs").size(), 6u);
}
