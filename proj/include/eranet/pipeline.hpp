#pragma once

// End-to-end runs: supervised baseline, mean-teacher U1 with checkpoints,
// reliability scoring, U3 and U4 self-training, and test-split evaluation;
// plus Cartesian ablation grids over run settings.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "eranet/cst.hpp"
#include "eranet/io.hpp"
#include "eranet/net.hpp"
#include "eranet/phantom.hpp"
#include "eranet/trainer.hpp"

namespace eranet::pipeline {

using Json = nlohmann::json;

/// Phantom data generated in memory when no manifest is given.
struct PhantomSource {
  phantom::PhantomConfig config;
  phantom::DatasetOptions options;
};

struct RunConfig {
  std::string manifest;  // dataset manifest.json; empty uses `phantom`
  std::optional<PhantomSource> phantom;
  std::optional<double> labeled_fraction;  // re-partitions the training split when set

  int k = 8;
  int d = 16;
  net::TrainConfig train;  // steps_per_epoch 0: ceil(|train split| / batch_size)
  bool era_u1 = true;
  bool era_u3 = true;
  bool cst_enabled = true;
  cst::CstConfig cst;

  std::uint64_t seed = 1;
  double spacing = 1.0;
  std::string output_dir;  // empty: nothing written
  bool dump_pgm = false;

  void validate() const;
  Json to_json() const;
  static RunConfig from_json(const Json& j);

  /// Hash of the canonical JSON without output_dir and dump_pgm, which do
  /// not affect results.
  std::string hash() const;
};

/// Settings from the published protocol (200 epochs, batch 8, lr 0.01),
/// kept for reference next to the desk-scale defaults.
RunConfig paper_settings();

struct StageReport {
  std::string name;
  int train_pairs = 0;
  std::vector<net::EpochLog> curve;
  MetricReport metrics;
  int era_applied = 0;
  int era_skipped = 0;
  std::vector<int> checkpoint_epochs;
  double seconds = 0.0;
};

struct ReliabilityEntry {
  std::string id;
  double score = 0.0;
  cst::Assignment assignment = cst::Assignment::Unreliable;
};

struct RunReport {
  std::string config_hash;
  Json config;
  std::uint64_t seed = 0;
  int labeled = 0;
  int unlabeled = 0;
  int test = 0;
  std::vector<StageReport> stages;
  double threshold = 0.0;
  std::vector<ReliabilityEntry> reliability;
  std::vector<int> reliability_histogram;
  std::map<std::string, std::map<std::string, int>> provenance;  // stage -> source -> pairs
  bool provenance_valid = true;
  std::vector<std::string> warnings;
  double total_seconds = 0.0;

  const StageReport* stage(const std::string& name) const;

  /// Wall-clock figures live under "timing" only, so the rest of the
  /// document is reproducible byte for byte.
  Json to_json(bool include_timing = true) const;
};

struct PipelineResult {
  RunReport report;
  std::map<std::string, net::ModelParams> models;
  std::vector<net::ModelParams> u1_checkpoints;
  std::vector<int> u1_checkpoint_epochs;
};

/// Error raised by a stage, tagged with the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage " + stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Loads the manifest or generates the phantom named by `cfg`.
io::Dataset resolve_dataset(const RunConfig& cfg);

/// Applies cfg.labeled_fraction, if any, to a copy of `data`.
io::Dataset prepare_dataset(const RunConfig& cfg, const io::Dataset& data);

/// Shared initial weights of every stage, drawn from the run seed.
net::ModelParams initial_params(const RunConfig& cfg, int num_classes);

/// cfg.train with steps_per_epoch resolved against the training split.
net::TrainConfig resolved_train(const RunConfig& cfg, const io::Dataset& data);

std::vector<net::TrainingPair> labeled_pairs(const io::Dataset& data);
std::vector<net::UnlabeledImage> unlabeled_images(const io::Dataset& data);

PipelineResult run_pipeline(const RunConfig& cfg, const io::Dataset& data);
PipelineResult run_pipeline(const RunConfig& cfg);

/// Pooled test-split metrics of `params`.
MetricReport evaluate_model(const net::ModelParams& params, const io::Dataset& data, double spacing);

struct AblationAxis {
  std::string name;
  std::vector<std::string> values;
};

/// Parses "name=v1,v2,...".
AblationAxis parse_axis(const std::string& spec);

/// Axis names: era, pca, cst (on/off), ratio (labeled fraction, "1/10" or
/// "0.1"), threshold, seed, epochs.
RunConfig with_setting(RunConfig cfg, const std::string& name, const std::string& value);

struct AblationRun {
  std::vector<std::pair<std::string, std::string>> settings;
  RunConfig config;
  std::optional<RunReport> report;
  std::string error;
};

struct AblationResult {
  std::vector<std::string> axes;
  std::vector<AblationRun> runs;

  /// One row per (run, stage); failed runs get one row with the error.
  std::string csv() const;
  Json to_json(bool include_timing = true) const;
};

/// Cartesian product of the axes, first axis slowest. Runs may execute on
/// `jobs` threads; results keep grid order.
AblationResult run_ablation(const RunConfig& base, const io::Dataset& data,
                            const std::vector<AblationAxis>& axes, int jobs = 1);

/// Writes report.json and, per stage, the final weights under
/// cfg.output_dir; with dump_pgm also PGM predictions for the test split.
void write_outputs(const RunConfig& cfg, const PipelineResult& result, const io::Dataset& data);

}  // namespace eranet::pipeline
