#pragma once

// Conditional self-training: pseudo-label stability across U1 checkpoints
// decides which unlabeled images are trusted for the first self-training
// stage (U3); U3 then relabels the rest for the second stage (U4).

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eranet/grid.hpp"
#include "eranet/net.hpp"
#include "eranet/trainer.hpp"

namespace eranet::cst {

struct CstConfig {
  double threshold = 0.8;
  int checkpoints = 5;

  void validate() const;
};

enum class Assignment { Reliable, Unreliable };

std::string_view to_string(Assignment a);

struct ReliabilityRecord {
  std::string id;
  std::vector<ClassMask> pseudo_labels;  // one per checkpoint, oldest first
  double score = 0.0;
  Assignment assignment = Assignment::Unreliable;
};

/// Mean one-vs-rest DSC over the foreground classes 1..C-1.
double multiclass_dsc(const ClassMask& a, const ClassMask& b);

/// Mean over the first K-1 pseudo-labels of their multi-class DSC against
/// the last one. Throws std::invalid_argument for K < 2 or mismatched sizes.
double reliability_score(std::span<const ClassMask> pseudo_labels);

struct Partition {
  std::vector<std::string> reliable;    // R >= T
  std::vector<std::string> unreliable;  // R < T
};

Partition partition(std::span<const ReliabilityRecord> records, double threshold);

/// Pseudo-labels every image with every checkpoint, scores, and assigns.
std::vector<ReliabilityRecord> score_unlabeled(std::span<const net::ModelParams> checkpoints,
                                               std::span<const net::UnlabeledImage> unlabeled,
                                               double threshold);

/// 10 equal-width bins over [0, 1]; a score of exactly 1 lands in the last.
std::vector<int> reliability_histogram(std::span<const ReliabilityRecord> records, int bins = 10);

enum class CstStage { U3, U4 };

/// Checks every pair's label source against the stage rules: ground truth
/// only for labeled ids; U3 pairs from the final checkpoint only for
/// reliable ids; U4 pairs additionally from U3 only for unreliable ids.
/// Returns a description of the first violation, or nullopt.
std::optional<std::string> validate_provenance(CstStage stage, std::span<const net::TrainingPair> pairs,
                                               std::span<const std::string> labeled_ids,
                                               const Partition& part);

/// Labeled pairs plus every reliable image, labeled with the final
/// checkpoint's prediction. `records` must follow `unlabeled` order.
std::vector<net::TrainingPair> build_u3_pairs(const std::vector<net::TrainingPair>& labeled,
                                              const std::vector<net::UnlabeledImage>& unlabeled,
                                              std::span<const ReliabilityRecord> records);

/// U3 pairs plus every unreliable image, labeled by `u3`.
std::vector<net::TrainingPair> build_u4_pairs(const std::vector<net::TrainingPair>& u3_pairs,
                                              const std::vector<net::UnlabeledImage>& unlabeled,
                                              std::span<const ReliabilityRecord> records,
                                              const net::ModelParams& u3);

struct CstResult {
  std::vector<ReliabilityRecord> records;
  Partition partition;
  std::vector<net::TrainingPair> u3_pairs;
  std::vector<net::TrainingPair> u4_pairs;
  net::TrainResult u3;
  net::TrainResult u4;
  std::vector<std::string> warnings;
};

/// Runs both self-training stages. U3 trains with ERA (when `era_u3`) on the
/// labeled pairs plus reliable images labeled by the final checkpoint; U4
/// trains without ERA on everything, unreliable images labeled by U3. Both
/// start from `init`.
CstResult run_cst(std::span<const net::ModelParams> u1_checkpoints,
                  const std::vector<net::TrainingPair>& labeled,
                  const std::vector<net::UnlabeledImage>& unlabeled, const CstConfig& cfg,
                  const net::TrainConfig& train, const net::ModelParams& init, bool era_u3,
                  std::uint64_t seed);

}  // namespace eranet::cst
