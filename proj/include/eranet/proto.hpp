#pragma once

// Prototype consistency: class prototypes as probability-weighted feature
// means, cosine similarity of every pixel feature to every prototype, and a
// squared-error loss pulling the segmentation output toward the softmax of
// that similarity map.

#include "eranet/grid.hpp"

namespace eranet::proto {

inline constexpr double kEpsilon = 1e-8;

/// D x C prototype matrix, column-major by class: p[j * depth + d].
template <typename T>
struct Prototypes {
  int depth = 0;
  int classes = 0;
  std::vector<T> values;

  T at(int d, int j) const { return values[static_cast<std::size_t>(j) * depth + d]; }
  T& at(int d, int j) { return values[static_cast<std::size_t>(j) * depth + d]; }
};

template <typename T>
struct PrototypeBundle {
  Prototypes<T> prototypes;
  Planes<T> similarity;  // S, C x H x W, entries in [-1, 1]
  ProbMap<T> prediction;  // SS, class-softmax of S
};

/// P_j = sum_i F_i sigma_ij / (sum_i sigma_ij + eps); classes whose total
/// probability mass is below eps get a zero column.
template <typename T>
Prototypes<T> compute_prototypes(const Planes<T>& features, const ProbMap<T>& probs);

/// S_ji = <P_j, F_i> / (|P_j| |F_i| + eps).
template <typename T>
Planes<T> similarity_map(const Prototypes<T>& prototypes, const Planes<T>& features);

/// Per-pixel softmax over the class axis.
template <typename T>
ProbMap<T> prototypical_prediction(const Planes<T>& similarity);

template <typename T>
PrototypeBundle<T> compute_bundle(const Planes<T>& features, const ProbMap<T>& probs);

template <typename T>
struct ConsistencyLoss {
  T value = 0;
  Planes<T> dlogits;  // gradient w.r.t. the logits behind `probs`
};

/// sum_j sum_i (SS_ij - sigma_ij)^2 / (H W). The target SS is held constant;
/// the gradient flows only through sigma.
template <typename T>
ConsistencyLoss<T> consistency_loss(const ProbMap<T>& target, const ProbMap<T>& probs);

}  // namespace eranet::proto
