#include "eranet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace eranet::net {

namespace {

// Endless stream of indices: a fresh shuffle each time the previous one runs out.
class CyclicSampler {
 public:
  CyclicSampler(std::size_t n, Rng rng) : n_(n), rng_(std::move(rng)) {}

  std::size_t next() {
    if (pos_ == order_.size()) {
      order_.resize(n_);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::size_t n_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

int steps_for(const TrainConfig& cfg, std::size_t pool, std::size_t per_step) {
  if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
  return static_cast<int>((pool + per_step - 1) / per_step);
}

std::uint64_t item_seed(std::uint64_t seed, const std::string& stage, int epoch, int step,
                        const std::string& id) {
  return derive_seed(seed, {hash_tag(stage), static_cast<std::uint64_t>(epoch),
                            static_cast<std::uint64_t>(step), hash_tag(id)});
}

class EpochAccumulator {
 public:
  void add(const StepStats& s) {
    sum_.l_sup += s.loss.l_sup;
    sum_.l_consis += s.loss.l_consis;
    sum_.l_unsup += s.loss.l_unsup;
    sum_.lambda_t += s.loss.lambda_t;
    sum_.total += s.loss.total;
    applied_ += s.era_applied;
    skipped_ += s.era_skipped;
    ++steps_;
  }

  EpochLog finish(int epoch) const {
    EpochLog log{epoch, sum_, steps_, applied_, skipped_};
    if (steps_ > 0) {
      const double inv = 1.0 / steps_;
      log.mean.l_sup *= inv;
      log.mean.l_consis *= inv;
      log.mean.l_unsup *= inv;
      log.mean.lambda_t *= inv;
      log.mean.total *= inv;
    }
    return log;
  }

 private:
  LossBreakdown sum_;
  int steps_ = 0;
  int applied_ = 0;
  int skipped_ = 0;
};

void record_epoch(TrainResult& out, const EpochAccumulator& acc, int epoch) {
  out.curve.push_back(acc.finish(epoch));
  out.era_applied += out.curve.back().era_applied;
  out.era_skipped += out.curve.back().era_skipped;
}

}  // namespace

std::string_view to_string(LabelSource s) {
  switch (s) {
    case LabelSource::GroundTruth: return "ground_truth";
    case LabelSource::FinalCheckpoint: return "u1_final_checkpoint";
    case LabelSource::SelfTrainedU3: return "u3";
  }
  return "unknown";
}

std::vector<int> checkpoint_epochs(int epochs, int k) {
  if (k < 1) throw std::invalid_argument("checkpoint count must be positive");
  std::vector<int> out;
  for (int j = 1; j <= k; ++j) {
    const int e = static_cast<int>((static_cast<long long>(j) * epochs + k - 1) / k);
    if (out.empty() || e > out.back()) out.push_back(e);
  }
  return out;
}

TrainResult train_supervised(const std::vector<TrainingPair>& pairs, const ModelParams& init,
                             const TrainConfig& cfg, bool use_era, std::uint64_t seed,
                             const std::string& stage) {
  cfg.validate();
  if (pairs.empty()) throw std::invalid_argument(stage + ": no training pairs");
  TrainState state = TrainState::fresh(init);
  TrainResult out;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const int steps = steps_for(cfg, pairs.size(), batch);
  CyclicSampler sampler(pairs.size(), make_rng(seed, {hash_tag(stage), hash_tag("labeled-order")}));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochAccumulator acc;
    for (int step = 0; step < steps; ++step) {
      std::vector<LabeledItem> items;
      for (std::size_t n = 0; n < batch; ++n) {
        const auto& p = pairs[sampler.next()];
        items.push_back({p.image, p.label, item_seed(seed, stage, epoch, step, p.id)});
      }
      acc.add(train_step_supervised(state, items, epoch, cfg, use_era));
    }
    record_epoch(out, acc, epoch);
  }
  out.student = state.student;
  out.teacher = state.teacher;
  return out;
}

TrainResult train_mean_teacher(const std::vector<TrainingPair>& labeled,
                               const std::vector<UnlabeledImage>& unlabeled, const ModelParams& init,
                               const TrainConfig& cfg, std::uint64_t seed, int num_checkpoints,
                               const std::string& stage) {
  cfg.validate();
  if (labeled.empty()) throw std::invalid_argument(stage + ": no labeled pairs");
  const auto marks = checkpoint_epochs(cfg.epochs, num_checkpoints);
  TrainState state = TrainState::fresh(init);
  TrainResult out;

  const bool semi = !unlabeled.empty();
  const auto per_step_l = static_cast<std::size_t>(semi ? cfg.labeled_per_batch : cfg.batch_size);
  const auto per_step_u = static_cast<std::size_t>(cfg.batch_size - cfg.labeled_per_batch);
  if (semi && per_step_u == 0) {
    throw std::invalid_argument(stage + ": labeled_per_batch leaves no room for unlabeled images");
  }
  const int steps = semi ? steps_for(cfg, unlabeled.size(), per_step_u)
                         : steps_for(cfg, labeled.size(), per_step_l);
  CyclicSampler l_sampler(labeled.size(), make_rng(seed, {hash_tag(stage), hash_tag("labeled-order")}));
  CyclicSampler u_sampler(std::max<std::size_t>(unlabeled.size(), 1),
                          make_rng(seed, {hash_tag(stage), hash_tag("unlabeled-order")}));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochAccumulator acc;
    for (int step = 0; step < steps; ++step) {
      std::vector<LabeledItem> li;
      for (std::size_t n = 0; n < per_step_l; ++n) {
        const auto& p = labeled[l_sampler.next()];
        li.push_back({p.image, p.label, item_seed(seed, stage, epoch, step, p.id)});
      }
      if (!semi) {
        acc.add(train_step_supervised(state, li, epoch, cfg, cfg.use_era));
        continue;
      }
      std::vector<UnlabeledItem> ui;
      for (std::size_t n = 0; n < per_step_u; ++n) {
        const auto& u = unlabeled[u_sampler.next()];
        ui.push_back({u.image, item_seed(seed, stage, epoch, step, u.id)});
      }
      acc.add(train_step_u1(state, li, ui, epoch, cfg));
    }
    record_epoch(out, acc, epoch);
    if (std::find(marks.begin(), marks.end(), epoch + 1) != marks.end()) {
      out.checkpoints.push_back(state.student);
      out.checkpoint_epochs.push_back(epoch + 1);
    }
  }
  out.student = state.student;
  out.teacher = state.teacher;
  return out;
}

std::vector<ClassMask> predict_all(const ModelParams& params, const std::vector<const Image2D*>& images) {
  std::vector<ClassMask> out;
  out.reserve(images.size());
  for (const auto* img : images) out.push_back(predict(params, *img));
  return out;
}

}  // namespace eranet::net
