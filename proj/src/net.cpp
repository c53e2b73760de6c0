#include "eranet/net.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace eranet::net {

ModelParams init_params(int k, int d, int c, Rng& rng) {
  if (k < 1 || d < 1 || c < 1) throw std::invalid_argument("layer widths must be positive");
  ModelParams p(k, d, c);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](std::size_t offset, std::size_t n, double fan_in) {
    const double std_dev = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < n; ++i) p.values[offset + i] = static_cast<float>(normal(rng) * std_dev);
  };
  fill(p.conv1_w(), 9 * static_cast<std::size_t>(k), 9.0);
  fill(p.conv2_w(), 9 * static_cast<std::size_t>(d) * k, 9.0 * k);
  fill(p.head_w(), static_cast<std::size_t>(c) * d, double(d));
  return p;
}

namespace {

// Dot product with eight fixed partial sums so the compiler can vectorize
// without reassociation flags; the summation order is still fixed.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t kLanes = 8;
  T part[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) part[j] += a[i + j] * b[i + j];
  }
  T acc = 0;
  for (; i < n; ++i) acc += a[i] * b[i];
  for (std::size_t j = 0; j < kLanes; ++j) acc += part[j];
  return acc;
}

// 3x3 convolution, stride 1, zero padding 1. Weights [out][in][9].
// Row-at-a-time so each output row stays in cache across all taps.
template <typename T>
void conv3x3(const Planes<T>& in, const T* w, const T* b, Planes<T>& out) {
  const int h = in.height, wd = in.width, cin = in.channels;
  for (int o = 0; o < out.channels; ++o) {
    T* op = out.plane(o).data();
    for (int y = 0; y < h; ++y) {
      T* dst = op + static_cast<std::ptrdiff_t>(y) * wd;
      std::fill(dst, dst + wd, b[o]);
      for (int i = 0; i < cin; ++i) {
        const T* ip = in.plane(i).data();
        const T* k = w + (o * cin + i) * 9;
        for (int ky = 0; ky < 3; ++ky) {
          const int yy = y + ky - 1;
          if (yy < 0 || yy >= h) continue;
          const T* src = ip + static_cast<std::ptrdiff_t>(yy) * wd;
          const T w0 = k[ky * 3], w1 = k[ky * 3 + 1], w2 = k[ky * 3 + 2];
          for (int x = 0; x < wd; ++x) dst[x] += w1 * src[x];
          for (int x = 1; x < wd; ++x) dst[x] += w0 * src[x - 1];
          for (int x = 0; x + 1 < wd; ++x) dst[x] += w2 * src[x + 1];
        }
      }
    }
  }
}

template <typename T>
void conv3x3_backward(const Planes<T>& in, const T* w, const Planes<T>& dout, T* dw, T* db,
                      Planes<T>* din) {
  const int h = in.height, wd = in.width, cin = in.channels;
  const auto n = static_cast<std::size_t>(wd);
  for (int o = 0; o < dout.channels; ++o) {
    const T* gp = dout.plane(o).data();
    T bsum = 0;
    for (std::size_t i = 0; i < dout.plane_size(); ++i) bsum += gp[i];
    db[o] += bsum;
    for (int i = 0; i < cin; ++i) {
      const T* ip = in.plane(i).data();
      T* dip = din ? din->plane(i).data() : nullptr;
      const int base = (o * cin + i) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const int dy = ky - 1;
        const T w0 = w[base + ky * 3], w1 = w[base + ky * 3 + 1], w2 = w[base + ky * 3 + 2];
        T a0 = 0, a1 = 0, a2 = 0;
        for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
          const T* g = gp + static_cast<std::ptrdiff_t>(y) * wd;
          const T* src = ip + static_cast<std::ptrdiff_t>(y + dy) * wd;
          a0 += dot(g + 1, src, n - 1);
          a1 += dot(g, src, n);
          a2 += dot(g, src + 1, n - 1);
          if (dip) {
            T* dst = dip + static_cast<std::ptrdiff_t>(y + dy) * wd;
            for (int x = 0; x < wd; ++x) dst[x] += w1 * g[x];
            for (int x = 0; x + 1 < wd; ++x) dst[x] += w0 * g[x + 1];
            for (int x = 1; x < wd; ++x) dst[x] += w2 * g[x - 1];
          }
        }
        dw[base + ky * 3] += a0;
        dw[base + ky * 3 + 1] += a1;
        dw[base + ky * 3 + 2] += a2;
      }
    }
  }
}

template <typename T>
Planes<T> relu(const Planes<T>& pre) {
  Planes<T> out = pre;
  for (auto& v : out.data) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
void relu_backward_inplace(const Planes<T>& pre, Planes<T>& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    if (!(pre.data[i] > T{0})) grad.data[i] = T{0};
  }
}

template <typename T>
void backward_accumulate(const BasicParams<T>& p, const ForwardPass<T>& f, const Planes<T>& dlogits,
                         BasicParams<T>& grad) {
  const std::size_t n = f.features.plane_size();
  const T* w = p.values.data();
  T* g = grad.values.data();

  // head
  Planes<T> dfeat(p.d, f.features.height, f.features.width);
  for (int c = 0; c < p.c; ++c) {
    const auto dl = dlogits.plane(c);
    T bsum = 0;
    for (std::size_t i = 0; i < n; ++i) bsum += dl[i];
    g[p.head_b() + c] += bsum;
    for (int d = 0; d < p.d; ++d) {
      const auto fd = f.features.plane(d);
      g[p.head_w() + c * p.d + d] += dot(dl.data(), fd.data(), n);
      const T wv = w[p.head_w() + c * p.d + d];
      auto df = dfeat.plane(d);
      for (std::size_t i = 0; i < n; ++i) df[i] += wv * dl[i];
    }
  }
  relu_backward_inplace(f.pre2, dfeat);

  Planes<T> dhidden(p.k, f.hidden.height, f.hidden.width);
  conv3x3_backward(f.hidden, w + p.conv2_w(), dfeat, g + p.conv2_w(), g + p.conv2_b(), &dhidden);
  relu_backward_inplace(f.pre1, dhidden);
  conv3x3_backward<T>(f.input, w + p.conv1_w(), dhidden, g + p.conv1_w(), g + p.conv1_b(), nullptr);
}

template <typename T>
T safe_log(T p) {
  return std::log(std::max(p, std::numeric_limits<T>::min()));
}

}  // namespace

template <typename T>
void softmax_inplace(Planes<T>& z) {
  const std::size_t n = z.plane_size();
  const int classes = z.channels;
  for (std::size_t i = 0; i < n; ++i) {
    T mx = z.at(0, i);
    for (int c = 1; c < classes; ++c) mx = std::max(mx, z.at(c, i));
    T sum = 0;
    for (int c = 0; c < classes; ++c) {
      const T e = std::exp(z.at(c, i) - mx);
      z.at(c, i) = e;
      sum += e;
    }
    const T inv = T(1) / sum;
    for (int c = 0; c < classes; ++c) z.at(c, i) *= inv;
  }
}

template <typename T>
Planes<T> softmax_backward(const ProbMap<T>& probs, const Planes<T>& dprobs) {
  Planes<T> dz(probs.channels, probs.height, probs.width);
  const std::size_t n = probs.plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    T dot = 0;
    for (int c = 0; c < probs.channels; ++c) dot += probs.at(c, i) * dprobs.at(c, i);
    for (int c = 0; c < probs.channels; ++c) {
      dz.at(c, i) = probs.at(c, i) * (dprobs.at(c, i) - dot);
    }
  }
  return dz;
}

template <typename T>
ForwardPass<T> forward(const BasicParams<T>& p, const Image2D& image) {
  const int h = image.height, w = image.width;
  ForwardPass<T> f;
  f.input = Planes<T>(1, h, w);
  for (std::size_t i = 0; i < image.data.size(); ++i) f.input.data[i] = static_cast<T>(image.data[i]);

  f.pre1 = Planes<T>(p.k, h, w);
  conv3x3(f.input, p.values.data() + p.conv1_w(), p.values.data() + p.conv1_b(), f.pre1);
  f.hidden = relu(f.pre1);
  f.pre2 = Planes<T>(p.d, h, w);
  conv3x3(f.hidden, p.values.data() + p.conv2_w(), p.values.data() + p.conv2_b(), f.pre2);
  f.features = relu(f.pre2);

  f.logits = Planes<T>(p.c, h, w);
  const std::size_t n = f.logits.plane_size();
  for (int c = 0; c < p.c; ++c) {
    auto out = f.logits.plane(c);
    std::fill(out.begin(), out.end(), p.values[p.head_b() + c]);
    for (int d = 0; d < p.d; ++d) {
      const T wv = p.values[p.head_w() + c * p.d + d];
      const auto fd = f.features.plane(d);
      for (std::size_t i = 0; i < n; ++i) out[i] += wv * fd[i];
    }
  }
  for (T v : f.logits.data) {
    if (!std::isfinite(v)) throw std::runtime_error("non-finite activation in forward pass");
  }
  f.probs = f.logits;
  softmax_inplace(f.probs);
  return f;
}

template <typename T>
BasicParams<T> backward(const BasicParams<T>& params, const ForwardPass<T>& pass,
                        const Planes<T>& dlogits) {
  BasicParams<T> grad(params.k, params.d, params.c);
  backward_accumulate(params, pass, dlogits, grad);
  return grad;
}

ClassMask predict(const ModelParams& params, const Image2D& image) {
  return argmax_labels(forward(params, image).probs);
}

template <typename T>
LossGrad<T> supervised_loss(const ProbMap<T>& probs, const ClassMask& gt) {
  if (gt.height != probs.height || gt.width != probs.width) {
    throw std::invalid_argument("label and prediction sizes differ");
  }
  if (gt.num_classes != probs.channels) throw std::invalid_argument("class count mismatch");
  const std::size_t n = probs.plane_size();
  const T inv_n = T(1) / T(n);
  LossGrad<T> out;
  out.dlogits = Planes<T>(probs.channels, probs.height, probs.width);

  // cross-entropy, gradient taken directly w.r.t. logits
  T ce = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = gt.data[i];
    ce -= safe_log(probs.at(y, i));
    for (int c = 0; c < probs.channels; ++c) {
      out.dlogits.at(c, i) = T(0.5) * (probs.at(c, i) - (c == y ? T(1) : T(0))) * inv_n;
    }
  }
  ce *= inv_n;

  // soft Dice over foreground classes, chained through the softmax
  T dice = 0;
  const int fg = probs.channels - 1;
  if (fg > 0) {
    const T eps = T(kDiceEpsilon);
    Planes<T> dprobs(probs.channels, probs.height, probs.width);
    for (int c = 1; c < probs.channels; ++c) {
      T inter = 0, sp = 0, sg = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T g = gt.data[i] == c ? T(1) : T(0);
        inter += probs.at(c, i) * g;
        sp += probs.at(c, i);
        sg += g;
      }
      const T num = T(2) * inter + eps;
      const T den = sp + sg + eps;
      dice += T(1) - num / den;
      const T scale = T(0.5) / T(fg);
      for (std::size_t i = 0; i < n; ++i) {
        const T g = gt.data[i] == c ? T(1) : T(0);
        dprobs.at(c, i) = -scale * (T(2) * g * den - num) / (den * den);
      }
    }
    dice /= T(fg);
    const auto dz = softmax_backward(probs, dprobs);
    for (std::size_t i = 0; i < dz.data.size(); ++i) out.dlogits.data[i] += dz.data[i];
  }
  out.value = T(0.5) * ce + T(0.5) * dice;
  return out;
}

template <typename T>
LossGrad<T> unsupervised_loss(const ProbMap<T>& probs, const ClassMask& target) {
  if (target.height != probs.height || target.width != probs.width) {
    throw std::invalid_argument("target and prediction sizes differ");
  }
  const std::size_t n = probs.plane_size();
  const T inv_n = T(1) / T(n);
  LossGrad<T> out;
  out.dlogits = Planes<T>(probs.channels, probs.height, probs.width);
  T ce = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = target.data[i];
    ce -= safe_log(probs.at(y, i));
    for (int c = 0; c < probs.channels; ++c) {
      out.dlogits.at(c, i) = (probs.at(c, i) - (c == y ? T(1) : T(0))) * inv_n;
    }
  }
  out.value = ce * inv_n;
  return out;
}

template <typename T>
LossGrad<T> unsupervised_loss(const ProbMap<T>& student, const ProbMap<T>& teacher) {
  if (student.channels != teacher.channels) throw std::invalid_argument("class count mismatch");
  return unsupervised_loss(student, argmax_labels(teacher));
}

template <typename T>
LossGrad<T> unsupervised_loss_soft(const ProbMap<T>& probs, const ProbMap<T>& target) {
  if (target.data.size() != probs.data.size()) throw std::invalid_argument("target shape mismatch");
  const std::size_t n = probs.plane_size();
  const T inv_n = T(1) / T(n);
  LossGrad<T> out;
  out.dlogits = Planes<T>(probs.channels, probs.height, probs.width);
  T ce = 0;
  for (std::size_t i = 0; i < n; ++i) {
    T mass = 0;
    for (int c = 0; c < probs.channels; ++c) mass += target.at(c, i);
    for (int c = 0; c < probs.channels; ++c) {
      ce -= target.at(c, i) * safe_log(probs.at(c, i));
      out.dlogits.at(c, i) = (mass * probs.at(c, i) - target.at(c, i)) * inv_n;
    }
  }
  out.value = ce * inv_n;
  return out;
}

double lambda_at(double epoch, double max_epoch, double lambda_max) {
  if (max_epoch < 1.0 || epoch < 0.0 || epoch > max_epoch) {
    throw std::invalid_argument("lambda_at requires 0 <= E <= E_max and E_max >= 1");
  }
  const double r = 1.0 - epoch / max_epoch;
  return lambda_max * std::exp(-10.0 * r * r);
}

double lr_at(double epoch, double total_epoch, double base_lr) {
  if (total_epoch <= 0.0 || epoch < 0.0 || epoch > total_epoch) {
    throw std::invalid_argument("lr_at requires 0 <= epoch <= total_epoch");
  }
  return base_lr * std::pow(1.0 - epoch / total_epoch, 0.9);
}

template <typename T>
void ema_update(BasicParams<T>& teacher, const BasicParams<T>& student, double alpha) {
  if (!teacher.same_shape(student)) throw std::invalid_argument("teacher/student shape mismatch");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("EMA decay must lie in [0, 1]");
  const T a = static_cast<T>(alpha);
  const T b = static_cast<T>(1.0 - alpha);
  for (std::size_t i = 0; i < teacher.values.size(); ++i) {
    teacher.values[i] = a * teacher.values[i] + b * student.values[i];
  }
}

template <typename T>
void adam_step(BasicParams<T>& params, const BasicParams<T>& grad, OptimizerState<T>& state, double lr,
               const AdamConfig& cfg) {
  const std::size_t n = params.values.size();
  if (grad.values.size() != n) throw std::invalid_argument("gradient shape mismatch");
  if (state.m.size() != n) {
    state.m.assign(n, T{0});
    state.v.assign(n, T{0});
  }
  ++state.step;
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  const T c1 = T(1.0 - std::pow(cfg.beta1, double(state.step)));
  const T c2 = T(1.0 - std::pow(cfg.beta2, double(state.step)));
  const T rate = T(lr), eps = T(cfg.epsilon);
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grad.values[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const T mhat = state.m[i] / c1;
    const T vhat = state.v[i] / c2;
    params.values[i] -= rate * mhat / (std::sqrt(vhat) + eps);
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (steps_per_epoch < 0) throw std::invalid_argument("steps_per_epoch must be nonnegative");
  if (labeled_per_batch < 0 || labeled_per_batch > batch_size) {
    throw std::invalid_argument("labeled_per_batch must lie in [0, batch_size]");
  }
  if (!(base_lr > 0.0)) throw std::invalid_argument("base_lr must be positive");
  if (!(ema_alpha >= 0.0 && ema_alpha <= 1.0)) throw std::invalid_argument("ema_alpha must lie in [0, 1]");
  era.validate();
}

template <typename T>
Objective<T> u1_objective(const BasicParams<T>& params, std::span<const SupervisedSample> labeled,
                          std::span<const UnsupervisedSample<T>> unlabeled, double lambda, bool use_pca) {
  Objective<T> out{{}, BasicParams<T>(params.k, params.d, params.c)};
  if (!labeled.empty()) {
    const T scale = T(1) / T(labeled.size());
    T sum = 0;
    for (const auto& s : labeled) {
      const auto pass = forward(params, s.image);
      auto lg = supervised_loss(pass.probs, s.label);
      sum += lg.value;
      for (auto& v : lg.dlogits.data) v *= scale;
      backward_accumulate(params, pass, lg.dlogits, out.grad);
    }
    out.parts.l_sup = double(sum * scale);
  }
  if (!unlabeled.empty()) {
    const T scale = T(1) / T(unlabeled.size());
    const T consis_scale = T(lambda) * scale;
    T unsup_sum = 0, consis_sum = 0;
    for (const auto& s : unlabeled) {
      const auto pass = forward(params, s.image);
      auto lu = s.soft_target ? unsupervised_loss_soft(pass.probs, *s.soft_target)
                              : unsupervised_loss(pass.probs, s.hard_target);
      unsup_sum += lu.value;
      Planes<T> dl = std::move(lu.dlogits);
      for (auto& v : dl.data) v *= scale;
      if (use_pca) {
        const auto target = s.frozen_prototype_target
                                ? *s.frozen_prototype_target
                                : proto::compute_bundle(pass.features, pass.probs).prediction;
        const auto lc = proto::consistency_loss(target, pass.probs);
        consis_sum += lc.value;
        for (std::size_t i = 0; i < dl.data.size(); ++i) dl.data[i] += consis_scale * lc.dlogits.data[i];
      }
      backward_accumulate(params, pass, dl, out.grad);
    }
    out.parts.l_unsup = double(unsup_sum * scale);
    out.parts.l_consis = double(consis_sum * scale);
  }
  out.parts.lambda_t = use_pca && !unlabeled.empty() ? lambda : 0.0;
  out.parts.total = out.parts.l_sup + out.parts.lambda_t * out.parts.l_consis + out.parts.l_unsup;
  return out;
}

namespace {

SupervisedSample prepare_labeled(const LabeledItem& item, const TrainConfig& cfg, bool use_era,
                                 StepStats& stats) {
  if (!use_era) return {item.image, item.label};
  Rng rng(item.era_seed);
  auto r = era::apply_era(item.image, item.label, cfg.meniscus_classes, cfg.era, rng);
  (r.applied() ? stats.era_applied : stats.era_skipped) += 1;
  return {std::move(r.image), std::move(r.mask)};
}

UnsupervisedSample<float> prepare_unlabeled(const ModelParams& teacher, const UnlabeledItem& item,
                                            const TrainConfig& cfg, StepStats& stats) {
  const auto pass = forward(teacher, item.image);
  ClassMask pseudo = argmax_labels(pass.probs);
  UnsupervisedSample<float> s{item.image, pseudo, std::nullopt, std::nullopt};
  if (cfg.use_era) {
    Rng rng(item.era_seed);
    auto r = era::apply_era(item.image, pseudo, cfg.meniscus_classes, cfg.era, rng);
    (r.applied() ? stats.era_applied : stats.era_skipped) += 1;
    s.image = std::move(r.image);
    s.hard_target = std::move(r.mask);
  }
  if (cfg.soft_unsup_targets) {
    ProbMap<float> soft = pass.probs;
    // pixels truncated by ERA become confident background
    for (std::size_t i = 0; i < pseudo.data.size(); ++i) {
      if (s.hard_target.data[i] == pseudo.data[i]) continue;
      for (int c = 0; c < soft.channels; ++c) soft.at(c, i) = c == 0 ? 1.0f : 0.0f;
    }
    s.soft_target = std::move(soft);
  }
  return s;
}

void finish_step(TrainState& state, const Objective<float>& obj, int epoch, const TrainConfig& cfg) {
  if (!std::isfinite(obj.parts.total)) throw std::runtime_error("non-finite training loss");
  const double lr = lr_at(epoch, cfg.epochs, cfg.base_lr);
  adam_step(state.student, obj.grad, state.optimizer, lr, cfg.adam);
}

}  // namespace

StepStats train_step_u1(TrainState& state, std::span<const LabeledItem> labeled,
                        std::span<const UnlabeledItem> unlabeled, int epoch, const TrainConfig& cfg) {
  StepStats stats;
  std::vector<SupervisedSample> ls;
  ls.reserve(labeled.size());
  for (const auto& item : labeled) ls.push_back(prepare_labeled(item, cfg, cfg.use_era, stats));
  std::vector<UnsupervisedSample<float>> us;
  us.reserve(unlabeled.size());
  for (const auto& item : unlabeled) us.push_back(prepare_unlabeled(state.teacher, item, cfg, stats));

  const double lambda = cfg.lambda_override.value_or(lambda_at(epoch, cfg.epochs, cfg.lambda_max));
  const auto obj = u1_objective<float>(state.student, ls, us, lambda, cfg.use_pca);
  finish_step(state, obj, epoch, cfg);
  ema_update(state.teacher, state.student, cfg.ema_alpha);
  stats.loss = obj.parts;
  return stats;
}

StepStats train_step_supervised(TrainState& state, std::span<const LabeledItem> batch, int epoch,
                                const TrainConfig& cfg, bool use_era) {
  StepStats stats;
  std::vector<SupervisedSample> ls;
  ls.reserve(batch.size());
  for (const auto& item : batch) ls.push_back(prepare_labeled(item, cfg, use_era, stats));
  const auto obj = u1_objective<float>(state.student, ls, {}, 0.0, false);
  finish_step(state, obj, epoch, cfg);
  stats.loss = obj.parts;
  return stats;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor) {
  if (analytic.size() != numeric.size()) throw std::invalid_argument("gradient size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

double GradCheckReport::max_single() const { return std::max({l_sup, l_unsup, l_consis}); }

namespace {

struct GradInstance {
  BasicParams<double> params;
  std::vector<SupervisedSample> labeled;
  std::vector<UnsupervisedSample<double>> unlabeled;
};

double min_abs_preactivation(const BasicParams<double>& p, const Image2D& image) {
  const auto f = forward(p, image);
  double m = std::numeric_limits<double>::infinity();
  for (double v : f.pre1.data) m = std::min(m, std::abs(v));
  for (double v : f.pre2.data) m = std::min(m, std::abs(v));
  return m;
}

// Random instance whose ReLU pre-activations all sit at least `margin` away
// from the kink, so a 1e-5 probe never crosses it.
GradInstance make_instance(Rng& rng) {
  constexpr int kSize = 6, kHidden = 3, kDepth = 4, kClasses = 3;
  constexpr double kMargin = 1e-3;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, kClasses - 1);

  auto random_params = [&] {
    BasicParams<double> p(kHidden, kDepth, kClasses);
    auto fill = [&](std::size_t off, std::size_t n, double sd) {
      for (std::size_t i = 0; i < n; ++i) p.values[off + i] = normal(rng) * sd;
    };
    fill(p.conv1_w(), 9 * kHidden, std::sqrt(2.0 / 9.0));
    fill(p.conv1_b(), kHidden, 0.1);
    fill(p.conv2_w(), 9 * kDepth * kHidden, std::sqrt(2.0 / (9.0 * kHidden)));
    fill(p.conv2_b(), kDepth, 0.1);
    fill(p.head_w(), kClasses * kDepth, std::sqrt(2.0 / kDepth));
    fill(p.head_b(), kClasses, 0.1);
    return p;
  };
  auto random_image = [&] {
    Image2D img(kSize, kSize);
    for (auto& v : img.data) v = static_cast<float>(unit(rng));
    return img;
  };

  for (int attempt = 0; attempt < 1000; ++attempt) {
    GradInstance inst;
    inst.params = random_params();
    const auto teacher = random_params();
    bool clear = true;
    for (int i = 0; i < 2 && clear; ++i) {
      ClassMask m(kSize, kSize, kClasses);
      for (auto& v : m.data) v = static_cast<std::uint8_t>(label(rng));
      inst.labeled.push_back({random_image(), std::move(m)});
      clear = min_abs_preactivation(inst.params, inst.labeled.back().image) >= kMargin;
    }
    for (int i = 0; i < 2 && clear; ++i) {
      Image2D img = random_image();
      auto target = argmax_labels(forward(teacher, img).probs);
      inst.unlabeled.push_back({std::move(img), std::move(target), std::nullopt, std::nullopt});
      clear = min_abs_preactivation(inst.params, inst.unlabeled.back().image) >= kMargin;
    }
    if (!clear) continue;
    for (auto& s : inst.unlabeled) {
      const auto pass = forward(inst.params, s.image);
      s.frozen_prototype_target = proto::compute_bundle(pass.features, pass.probs).prediction;
    }
    return inst;
  }
  throw std::runtime_error("could not draw a kink-free gradient-check instance");
}

template <typename Fn>
double check(const BasicParams<double>& base, Fn objective) {
  constexpr double h = 1e-5;
  const BasicParams<double> analytic = objective(base).second;
  std::vector<double> numeric(base.values.size());
  BasicParams<double> probe = base;
  for (std::size_t i = 0; i < base.values.size(); ++i) {
    probe.values[i] = base.values[i] + h;
    const double up = objective(probe).first;
    probe.values[i] = base.values[i] - h;
    const double down = objective(probe).first;
    probe.values[i] = base.values[i];
    numeric[i] = (up - down) / (2.0 * h);
  }
  return max_relative_error(analytic.values, numeric);
}

}  // namespace

GradCheckReport grad_check(std::uint64_t seed) {
  Rng rng = make_rng(seed, {hash_tag("gradcheck")});
  const GradInstance inst = make_instance(rng);
  const std::span<const SupervisedSample> none_l;
  const std::span<const UnsupervisedSample<double>> none_u;
  constexpr double kComposedLambda = 0.1;

  GradCheckReport r;
  r.l_sup = check(inst.params, [&](const BasicParams<double>& p) {
    auto o = u1_objective<double>(p, inst.labeled, none_u, 0.0, false);
    return std::pair{o.parts.l_sup, std::move(o.grad)};
  });
  r.l_unsup = check(inst.params, [&](const BasicParams<double>& p) {
    auto o = u1_objective<double>(p, none_l, inst.unlabeled, 0.0, false);
    return std::pair{o.parts.l_unsup, std::move(o.grad)};
  });
  r.l_consis = check(inst.params, [&](const BasicParams<double>& p) {
    BasicParams<double> grad(p.k, p.d, p.c);
    double sum = 0.0;
    const double scale = 1.0 / double(inst.unlabeled.size());
    for (const auto& s : inst.unlabeled) {
      const auto pass = forward(p, s.image);
      auto lc = proto::consistency_loss(*s.frozen_prototype_target, pass.probs);
      sum += lc.value;
      for (auto& v : lc.dlogits.data) v *= scale;
      backward_accumulate(p, pass, lc.dlogits, grad);
    }
    return std::pair{sum * scale, std::move(grad)};
  });
  r.composed = check(inst.params, [&](const BasicParams<double>& p) {
    auto o = u1_objective<double>(p, inst.labeled, inst.unlabeled, kComposedLambda, true);
    return std::pair{o.parts.total, std::move(o.grad)};
  });
  return r;
}

#define ERANET_NET_INSTANTIATE(T)                                                                   \
  template ForwardPass<T> forward(const BasicParams<T>&, const Image2D&);                          \
  template BasicParams<T> backward(const BasicParams<T>&, const ForwardPass<T>&, const Planes<T>&); \
  template void softmax_inplace(Planes<T>&);                                                       \
  template Planes<T> softmax_backward(const ProbMap<T>&, const Planes<T>&);                        \
  template LossGrad<T> supervised_loss(const ProbMap<T>&, const ClassMask&);                       \
  template LossGrad<T> unsupervised_loss(const ProbMap<T>&, const ClassMask&);                     \
  template LossGrad<T> unsupervised_loss(const ProbMap<T>&, const ProbMap<T>&);                    \
  template LossGrad<T> unsupervised_loss_soft(const ProbMap<T>&, const ProbMap<T>&);               \
  template void ema_update(BasicParams<T>&, const BasicParams<T>&, double);                        \
  template void adam_step(BasicParams<T>&, const BasicParams<T>&, OptimizerState<T>&, double,      \
                          const AdamConfig&);                                                      \
  template Objective<T> u1_objective(const BasicParams<T>&, std::span<const SupervisedSample>,     \
                                     std::span<const UnsupervisedSample<T>>, double, bool);

ERANET_NET_INSTANTIATE(float)
ERANET_NET_INSTANTIATE(double)

#undef ERANET_NET_INSTANTIATE

}  // namespace eranet::net
