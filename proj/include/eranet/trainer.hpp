#pragma once

// Epoch loops over whole training sets: supervised training (baseline, U3,
// U4) and mean-teacher training (U1/U2) with checkpoint capture.

#include <cstdint>
#include <string>
#include <vector>

#include "eranet/grid.hpp"
#include "eranet/net.hpp"

namespace eranet::net {

/// Where a training label came from.
enum class LabelSource { GroundTruth, FinalCheckpoint, SelfTrainedU3 };

std::string_view to_string(LabelSource s);

struct TrainingPair {
  std::string id;
  Image2D image;
  ClassMask label;
  LabelSource source = LabelSource::GroundTruth;
};

struct UnlabeledImage {
  std::string id;
  Image2D image;
};

struct EpochLog {
  int epoch = 0;
  LossBreakdown mean;  // averaged over the epoch's steps
  int steps = 0;
  int era_applied = 0;
  int era_skipped = 0;
};

struct TrainResult {
  ModelParams student;
  ModelParams teacher;
  std::vector<EpochLog> curve;
  std::vector<ModelParams> checkpoints;  // student snapshots, oldest first
  std::vector<int> checkpoint_epochs;    // 1-based epoch counts
  int era_applied = 0;
  int era_skipped = 0;
};

/// Epochs (1-based, inclusive of the last) at which checkpoints are taken:
/// ceil(j * epochs / k) for j = 1..k, deduplicated.
std::vector<int> checkpoint_epochs(int epochs, int k);

/// Supervised training from `init`: batches of cfg.batch_size drawn from a
/// reshuffled cyclic stream of pairs. With steps_per_epoch unset an epoch is
/// ceil(|pairs| / batch_size) steps.
TrainResult train_supervised(const std::vector<TrainingPair>& pairs, const ModelParams& init,
                             const TrainConfig& cfg, bool use_era, std::uint64_t seed,
                             const std::string& stage);

/// Mean-teacher training: each step takes labeled_per_batch labeled pairs and
/// u = batch_size - labeled_per_batch unlabeled images from two cyclic
/// streams. With steps_per_epoch unset an epoch is ceil(|unlabeled| / u)
/// steps. With no unlabeled images every step is a supervised batch.
TrainResult train_mean_teacher(const std::vector<TrainingPair>& labeled,
                               const std::vector<UnlabeledImage>& unlabeled, const ModelParams& init,
                               const TrainConfig& cfg, std::uint64_t seed, int num_checkpoints,
                               const std::string& stage);

/// Argmax prediction for every image.
std::vector<ClassMask> predict_all(const ModelParams& params, const std::vector<const Image2D*>& images);

}  // namespace eranet::net
