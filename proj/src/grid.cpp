#include "eranet/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace eranet {

Image2D::Image2D(int h, int w, float fill)
    : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

void Image2D::validate() const {
  if (height < 8 || width < 8) {
    throw std::invalid_argument("image must be at least 8x8, got " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  if (data.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("image data length does not match its dimensions");
  }
  for (float v : data) {
    if (!std::isfinite(v)) throw std::invalid_argument("image contains a non-finite value");
  }
}

ClassMask::ClassMask(int h, int w, int classes, std::uint8_t fill)
    : height(h), width(w), num_classes(classes), data(static_cast<std::size_t>(h) * w, fill) {}

ClassMask ClassMask::binary(int cls) const {
  ClassMask out(height, width, 2);
  for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = data[i] == cls ? 1 : 0;
  return out;
}

std::size_t ClassMask::count(int cls) const {
  std::size_t n = 0;
  for (auto v : data) n += (v == cls);
  return n;
}

void ClassMask::validate() const {
  if (num_classes < 1 || num_classes > 256) throw std::invalid_argument("invalid class count");
  if (data.size() != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("mask data length does not match its dimensions");
  }
  for (auto v : data) {
    if (v >= num_classes) throw std::invalid_argument("mask label out of range");
  }
}

template <typename T>
ClassMask argmax_labels(const ProbMap<T>& probs) {
  ClassMask out(probs.height, probs.width, probs.channels);
  const std::size_t n = probs.plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    T best_v = probs.at(0, i);
    for (int c = 1; c < probs.channels; ++c) {
      if (probs.at(c, i) > best_v) {
        best_v = probs.at(c, i);
        best = c;
      }
    }
    out.data[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

template ClassMask argmax_labels(const ProbMap<float>&);
template ClassMask argmax_labels(const ProbMap<double>&);

namespace {

void require_same_shape(const ClassMask& a, const ClassMask& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mask dimensions differ");
}

struct OverlapCounts {
  std::size_t a = 0, b = 0, both = 0;
};

OverlapCounts overlap(const ClassMask& a, const ClassMask& b, int cls_a, int cls_b) {
  OverlapCounts c;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool in_a = cls_a < 0 ? a.data[i] != 0 : a.data[i] == cls_a;
    const bool in_b = cls_b < 0 ? b.data[i] != 0 : b.data[i] == cls_b;
    c.a += in_a;
    c.b += in_b;
    c.both += in_a && in_b;
  }
  return c;
}

double dice_from_counts(std::size_t both, std::size_t a, std::size_t b) {
  if (a == 0 && b == 0) return 1.0;
  if (a == 0 || b == 0) return 0.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

// 1D lower envelope of parabolas (Felzenszwalb & Huttenlocher).
void distance_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  auto intersect = [f](int q, int p) {
    return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
  };
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s = intersect(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = intersect(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) d[q] = inf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    d[q] = dq * dq + f[v[j]];
  }
}

// Sum of distances from surface pixels of `from` to the surface of `to`.
double surface_distance_sum(const std::vector<std::pair<int, int>>& from,
                            const std::vector<double>& to_sq_dist, int width) {
  double sum = 0.0;
  for (auto [y, x] : from) sum += std::sqrt(to_sq_dist[static_cast<std::size_t>(y) * width + x]);
  return sum;
}

std::vector<std::uint8_t> surface_sites(const std::vector<std::pair<int, int>>& surface, int height,
                                        int width) {
  std::vector<std::uint8_t> sites(static_cast<std::size_t>(height) * width, 0);
  for (auto [y, x] : surface) sites[static_cast<std::size_t>(y) * width + x] = 1;
  return sites;
}

double diagonal(const ClassMask& m, double spacing) {
  return std::hypot(double(m.height), double(m.width)) * spacing;
}

void fill_means(MetricReport& r) {
  const std::size_t fg = r.per_class_dsc.size() > 1 ? r.per_class_dsc.size() - 1 : 0;
  r.mean_dsc = r.mean_assd = 0.0;
  if (fg == 0) return;
  for (std::size_t c = 1; c < r.per_class_dsc.size(); ++c) {
    r.mean_dsc += r.per_class_dsc[c];
    r.mean_assd += r.per_class_assd[c];
  }
  r.mean_dsc /= double(fg);
  r.mean_assd /= double(fg);
}

}  // namespace

double dsc(const ClassMask& a, const ClassMask& b) {
  require_same_shape(a, b);
  const auto c = overlap(a, b, -1, -1);
  return dice_from_counts(c.both, c.a, c.b);
}

std::vector<std::pair<int, int>> surface_pixels(const ClassMask& mask) {
  std::vector<std::pair<int, int>> out;
  const int h = mask.height, w = mask.width;
  auto inside = [&](int y, int x) {
    return y >= 0 && y < h && x >= 0 && x < w && mask.at(y, x) != 0;
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask.at(y, x) == 0) continue;
      if (!inside(y - 1, x) || !inside(y + 1, x) || !inside(y, x - 1) || !inside(y, x + 1)) {
        out.emplace_back(y, x);
      }
    }
  }
  return out;
}

std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& sites, int height,
                                               int width) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) grid[i] = sites[i] ? 0.0 : inf;

  const int n = std::max(height, width);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) f[y] = grid[static_cast<std::size_t>(y) * width + x];
    distance_1d(f.data(), d.data(), height, v, z);
    for (int y = 0; y < height; ++y) grid[static_cast<std::size_t>(y) * width + x] = d[y];
  }
  for (int y = 0; y < height; ++y) {
    double* row = grid.data() + static_cast<std::size_t>(y) * width;
    std::copy(row, row + width, f.begin());
    distance_1d(f.data(), d.data(), width, v, z);
    std::copy(d.begin(), d.begin() + width, row);
  }
  return grid;
}

std::optional<double> assd(const ClassMask& a, const ClassMask& b, double spacing) {
  require_same_shape(a, b);
  if (!(spacing > 0.0)) throw std::invalid_argument("spacing must be positive");
  const auto sa = surface_pixels(a);
  const auto sb = surface_pixels(b);
  if (sa.empty() || sb.empty()) return std::nullopt;
  const auto da = squared_distance_transform(surface_sites(sa, a.height, a.width), a.height, a.width);
  const auto db = squared_distance_transform(surface_sites(sb, b.height, b.width), b.height, b.width);
  const double total = surface_distance_sum(sa, db, a.width) + surface_distance_sum(sb, da, b.width);
  return total / double(sa.size() + sb.size()) * spacing;
}

MetricReport evaluate(const ClassMask& pred, const ClassMask& gt, double spacing) {
  require_same_shape(pred, gt);
  if (pred.num_classes != gt.num_classes) throw std::invalid_argument("class count mismatch");
  const int classes = gt.num_classes;
  MetricReport r;
  r.per_class_dsc.assign(classes, 0.0);
  r.per_class_assd.assign(classes, 0.0);
  for (int c = 1; c < classes; ++c) {
    const auto bp = pred.binary(c);
    const auto bg = gt.binary(c);
    r.per_class_dsc[c] = dsc(bp, bg);
    const bool pe = bp.count(1) == 0, ge = bg.count(1) == 0;
    if (pe && ge) {
      r.per_class_assd[c] = 0.0;
    } else {
      r.per_class_assd[c] = assd(bp, bg, spacing).value_or(diagonal(gt, spacing));
    }
  }
  fill_means(r);
  return r;
}

MetricReport evaluate_volume(std::span<const ClassMask> preds, std::span<const ClassMask> gts,
                             double spacing) {
  if (preds.size() != gts.size()) throw std::invalid_argument("prediction/label count mismatch");
  if (gts.empty()) throw std::invalid_argument("empty evaluation stack");
  if (!(spacing > 0.0)) throw std::invalid_argument("spacing must be positive");
  const int classes = gts.front().num_classes;
  MetricReport r;
  r.per_class_dsc.assign(classes, 0.0);
  r.per_class_assd.assign(classes, 0.0);
  for (int c = 1; c < classes; ++c) {
    std::size_t sum_a = 0, sum_b = 0, sum_both = 0, surface_count = 0;
    double distance_sum = 0.0;
    double sentinel = 0.0;
    for (std::size_t s = 0; s < gts.size(); ++s) {
      const auto& p = preds[s];
      const auto& g = gts[s];
      require_same_shape(p, g);
      if (p.num_classes != classes || g.num_classes != classes) {
        throw std::invalid_argument("class count mismatch");
      }
      const auto counts = overlap(p, g, c, c);
      sum_a += counts.a;
      sum_b += counts.b;
      sum_both += counts.both;

      const auto bp = p.binary(c);
      const auto bg = g.binary(c);
      const auto sp = surface_pixels(bp);
      const auto sg = surface_pixels(bg);
      const double diag = diagonal(g, 1.0);
      sentinel = std::max(sentinel, diag);
      if (sp.empty() && sg.empty()) continue;
      surface_count += sp.size() + sg.size();
      if (sp.empty() || sg.empty()) {
        distance_sum += diag * double(sp.size() + sg.size());
        continue;
      }
      const auto dp = squared_distance_transform(surface_sites(sp, p.height, p.width), p.height, p.width);
      const auto dg = squared_distance_transform(surface_sites(sg, g.height, g.width), g.height, g.width);
      distance_sum += surface_distance_sum(sp, dg, p.width) + surface_distance_sum(sg, dp, g.width);
    }
    r.per_class_dsc[c] = dice_from_counts(sum_both, sum_a, sum_b);
    r.per_class_assd[c] = surface_count == 0 ? 0.0 : distance_sum / double(surface_count) * spacing;
  }
  fill_means(r);
  return r;
}

}  // namespace eranet
