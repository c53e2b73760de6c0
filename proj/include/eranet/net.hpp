#pragma once

// Small fully convolutional segmenter with hand-written backprop:
//
//   image -> conv3x3(1->k) -> ReLU -> conv3x3(k->D) -> ReLU (= F)
//         -> conv1x1(D->C) -> softmax (= sigma)
//
// plus the training losses, schedules, Adam, and the EMA teacher. Every
// numeric routine is templated so the same code runs in float for training
// and in double for finite-difference verification.

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "eranet/era.hpp"
#include "eranet/grid.hpp"
#include "eranet/proto.hpp"
#include "eranet/rng.hpp"

namespace eranet::net {

/// All weights in one flat buffer so Adam and EMA are plain vector ops.
/// Layout: conv1 w[k][9], b[k] | conv2 w[D][k][9], b[D] | head w[C][D], b[C].
template <typename T>
struct BasicParams {
  int k = 0;
  int d = 0;
  int c = 0;
  std::vector<T> values;

  BasicParams() = default;
  BasicParams(int k_, int d_, int c_)
      : k(k_), d(d_), c(c_), values(count(k_, d_, c_), T{0}) {}

  static std::size_t count(int k, int d, int c) {
    return static_cast<std::size_t>(10 * k + 9 * d * k + d + c * d + c);
  }

  std::size_t conv1_w() const { return 0; }
  std::size_t conv1_b() const { return 9 * static_cast<std::size_t>(k); }
  std::size_t conv2_w() const { return conv1_b() + k; }
  std::size_t conv2_b() const { return conv2_w() + 9 * static_cast<std::size_t>(d) * k; }
  std::size_t head_w() const { return conv2_b() + d; }
  std::size_t head_b() const { return head_w() + static_cast<std::size_t>(c) * d; }

  T& conv1_weight(int out, int tap) { return values[conv1_w() + out * 9 + tap]; }
  T& conv2_weight(int out, int in, int tap) { return values[conv2_w() + (out * k + in) * 9 + tap]; }
  T& head_weight(int cls, int feat) { return values[head_w() + cls * d + feat]; }

  bool same_shape(const BasicParams& o) const { return k == o.k && d == o.d && c == o.c; }

  template <typename U>
  BasicParams<U> cast() const {
    BasicParams<U> out(k, d, c);
    for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<U>(values[i]);
    return out;
  }

  friend bool operator==(const BasicParams&, const BasicParams&) = default;
};

using ModelParams = BasicParams<float>;

/// Kaiming-normal kernels (std sqrt(2 / fan_in)), zero biases.
ModelParams init_params(int k, int d, int c, Rng& rng);

template <typename T>
struct ForwardPass {
  Planes<T> input;     // 1 x H x W
  Planes<T> pre1;      // k x H x W
  Planes<T> hidden;    // relu(pre1)
  Planes<T> pre2;      // D x H x W
  Planes<T> features;  // F = relu(pre2)
  Planes<T> logits;    // C x H x W
  ProbMap<T> probs;    // sigma
};

/// Throws std::runtime_error if any logit is non-finite.
template <typename T>
ForwardPass<T> forward(const BasicParams<T>& params, const Image2D& image);

/// Gradient of a scalar loss w.r.t. all parameters, given dL/dlogits.
template <typename T>
BasicParams<T> backward(const BasicParams<T>& params, const ForwardPass<T>& pass,
                        const Planes<T>& dlogits);

ClassMask predict(const ModelParams& params, const Image2D& image);

template <typename T>
void softmax_inplace(Planes<T>& logits);

/// dL/dz from dL/dsigma through the per-pixel softmax Jacobian.
template <typename T>
Planes<T> softmax_backward(const ProbMap<T>& probs, const Planes<T>& dprobs);

template <typename T>
struct LossGrad {
  T value = 0;
  Planes<T> dlogits;
};

inline constexpr double kDiceEpsilon = 1e-6;

/// 0.5 * mean pixel cross-entropy + 0.5 * mean foreground soft-Dice loss.
template <typename T>
LossGrad<T> supervised_loss(const ProbMap<T>& probs, const ClassMask& gt);

/// Mean pixel cross-entropy of `probs` against hard labels.
template <typename T>
LossGrad<T> unsupervised_loss(const ProbMap<T>& probs, const ClassMask& target);

/// Teacher-output overload: targets are the teacher's argmax labels.
template <typename T>
LossGrad<T> unsupervised_loss(const ProbMap<T>& student, const ProbMap<T>& teacher);

/// Mean pixel cross-entropy against a soft target distribution.
template <typename T>
LossGrad<T> unsupervised_loss_soft(const ProbMap<T>& probs, const ProbMap<T>& target);

/// lambda_max * exp(-10 (1 - E/E_max)^2)
double lambda_at(double epoch, double max_epoch, double lambda_max = 0.1);

/// base_lr * (1 - epoch/total_epoch)^0.9
double lr_at(double epoch, double total_epoch, double base_lr);

/// teacher <- alpha * teacher + (1 - alpha) * student
template <typename T>
void ema_update(BasicParams<T>& teacher, const BasicParams<T>& student, double alpha);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct OptimizerState {
  std::vector<T> m;
  std::vector<T> v;
  std::int64_t step = 0;

  explicit OptimizerState(std::size_t n = 0) : m(n, T{0}), v(n, T{0}) {}
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

template <typename T>
void adam_step(BasicParams<T>& params, const BasicParams<T>& grad, OptimizerState<T>& state, double lr,
               const AdamConfig& cfg = {});

struct LossBreakdown {
  double l_sup = 0.0;
  double l_consis = 0.0;
  double l_unsup = 0.0;
  double lambda_t = 0.0;
  double total = 0.0;
};

struct TrainConfig {
  int epochs = 40;
  int batch_size = 8;
  int labeled_per_batch = 4;
  int steps_per_epoch = 0;  // 0: one pass over the stage's own training set
  double base_lr = 0.01;
  double ema_alpha = 0.99;
  double lambda_max = 0.1;
  bool use_era = true;
  bool use_pca = true;
  bool soft_unsup_targets = false;
  std::optional<double> lambda_override;  // replaces the ramp when set
  era::EraConfig era;
  std::set<int> meniscus_classes{1, 2};
  AdamConfig adam;

  void validate() const;
};

struct TrainState {
  ModelParams student;
  ModelParams teacher;
  OptimizerState<float> optimizer;

  static TrainState fresh(const ModelParams& init) {
    return TrainState{init, init, OptimizerState<float>(init.values.size())};
  }
};

struct LabeledItem {
  const Image2D& image;
  const ClassMask& label;
  std::uint64_t era_seed;
};

struct UnlabeledItem {
  const Image2D& image;
  std::uint64_t era_seed;
};

/// Training inputs after augmentation; the objective functions see only these.
struct SupervisedSample {
  Image2D image;
  ClassMask label;
};

template <typename T>
struct UnsupervisedSample {
  Image2D image;
  ClassMask hard_target;
  std::optional<ProbMap<T>> soft_target;
  // Prototype target SS held fixed; computed from the current forward when unset.
  std::optional<ProbMap<T>> frozen_prototype_target;
};

template <typename T>
struct Objective {
  LossBreakdown parts;
  BasicParams<T> grad;
};

/// L_sup averaged over `labeled` + lambda * L_consis + L_unsup averaged over
/// `unlabeled`, with its exact gradient (prototype target held constant).
template <typename T>
Objective<T> u1_objective(const BasicParams<T>& params, std::span<const SupervisedSample> labeled,
                          std::span<const UnsupervisedSample<T>> unlabeled, double lambda, bool use_pca);

struct StepStats {
  LossBreakdown loss;
  int era_applied = 0;
  int era_skipped = 0;
};

/// One mean-teacher step: teacher pseudo-labels the clean unlabeled images,
/// ERA perturbs labeled pairs and (image, pseudo-label) pairs, the student
/// takes one Adam step on the composed loss, then the teacher tracks it by EMA.
StepStats train_step_u1(TrainState& state, std::span<const LabeledItem> labeled,
                        std::span<const UnlabeledItem> unlabeled, int epoch, const TrainConfig& cfg);

/// One supervised-only Adam step on the student (teacher untouched).
StepStats train_step_supervised(TrainState& state, std::span<const LabeledItem> batch, int epoch,
                                const TrainConfig& cfg, bool use_era);

struct GradCheckReport {
  double l_sup = 0.0;
  double l_unsup = 0.0;
  double l_consis = 0.0;
  double composed = 0.0;

  double max_single() const;
};

/// Central-difference check (step 1e-5) of every loss term on a random
/// 6x6 double-precision instance.
GradCheckReport grad_check(std::uint64_t seed);

/// Componentwise relative error |a - n| / max(|a|, |n|, floor).
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor = 1e-6);

}  // namespace eranet::net
