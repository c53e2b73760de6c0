#include "eranet/proto.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "eranet/net.hpp"

namespace eranet::proto {

namespace {

template <typename T>
void require_same_grid(const Planes<T>& a, const Planes<T>& b) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("feature map and probability map sizes differ");
  }
}

}  // namespace

template <typename T>
Prototypes<T> compute_prototypes(const Planes<T>& features, const ProbMap<T>& probs) {
  require_same_grid(features, probs);
  Prototypes<T> p{features.channels, probs.channels,
                  std::vector<T>(static_cast<std::size_t>(features.channels) * probs.channels, T{0})};
  const std::size_t n = features.plane_size();
  for (int j = 0; j < probs.channels; ++j) {
    const auto w = probs.plane(j);
    T mass = 0;
    for (std::size_t i = 0; i < n; ++i) mass += w[i];
    if (mass < T(kEpsilon)) continue;
    for (int d = 0; d < features.channels; ++d) {
      const auto f = features.plane(d);
      T acc = 0;
      for (std::size_t i = 0; i < n; ++i) acc += f[i] * w[i];
      p.at(d, j) = acc / (mass + T(kEpsilon));
    }
  }
  return p;
}

template <typename T>
Planes<T> similarity_map(const Prototypes<T>& prototypes, const Planes<T>& features) {
  if (prototypes.depth != features.channels) {
    throw std::invalid_argument("prototype depth does not match feature depth");
  }
  const std::size_t n = features.plane_size();
  std::vector<T> feature_norm(n, T{0});
  for (int d = 0; d < features.channels; ++d) {
    const auto f = features.plane(d);
    for (std::size_t i = 0; i < n; ++i) feature_norm[i] += f[i] * f[i];
  }
  for (auto& v : feature_norm) v = std::sqrt(v);

  Planes<T> s(prototypes.classes, features.height, features.width);
  for (int j = 0; j < prototypes.classes; ++j) {
    T pnorm = 0;
    for (int d = 0; d < prototypes.depth; ++d) pnorm += prototypes.at(d, j) * prototypes.at(d, j);
    pnorm = std::sqrt(pnorm);
    auto out = s.plane(j);
    for (int d = 0; d < features.channels; ++d) {
      const T pd = prototypes.at(d, j);
      const auto f = features.plane(d);
      for (std::size_t i = 0; i < n; ++i) out[i] += pd * f[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      out[i] /= pnorm * feature_norm[i] + T(kEpsilon);
      out[i] = std::clamp(out[i], T(-1), T(1));
    }
  }
  return s;
}

template <typename T>
ProbMap<T> prototypical_prediction(const Planes<T>& similarity) {
  ProbMap<T> out = similarity;
  net::softmax_inplace(out);
  return out;
}

template <typename T>
PrototypeBundle<T> compute_bundle(const Planes<T>& features, const ProbMap<T>& probs) {
  PrototypeBundle<T> b;
  b.prototypes = compute_prototypes(features, probs);
  b.similarity = similarity_map(b.prototypes, features);
  b.prediction = prototypical_prediction(b.similarity);
  return b;
}

template <typename T>
ConsistencyLoss<T> consistency_loss(const ProbMap<T>& target, const ProbMap<T>& probs) {
  if (target.channels != probs.channels || target.height != probs.height ||
      target.width != probs.width) {
    throw std::invalid_argument("consistency target and prediction shapes differ");
  }
  const T inv_n = T(1) / T(probs.plane_size());
  ConsistencyLoss<T> out;
  Planes<T> dprobs(probs.channels, probs.height, probs.width);
  T sum = 0;
  for (std::size_t i = 0; i < probs.data.size(); ++i) {
    const T diff = target.data[i] - probs.data[i];
    sum += diff * diff;
    dprobs.data[i] = T(-2) * diff * inv_n;
  }
  out.value = sum * inv_n;
  out.dlogits = net::softmax_backward(probs, dprobs);
  return out;
}

#define ERANET_PROTO_INSTANTIATE(T)                                                         \
  template Prototypes<T> compute_prototypes(const Planes<T>&, const ProbMap<T>&);          \
  template Planes<T> similarity_map(const Prototypes<T>&, const Planes<T>&);               \
  template ProbMap<T> prototypical_prediction(const Planes<T>&);                           \
  template PrototypeBundle<T> compute_bundle(const Planes<T>&, const ProbMap<T>&);         \
  template ConsistencyLoss<T> consistency_loss(const ProbMap<T>&, const ProbMap<T>&);

ERANET_PROTO_INSTANTIATE(float)
ERANET_PROTO_INSTANTIATE(double)

#undef ERANET_PROTO_INSTANTIATE

}  // namespace eranet::proto
