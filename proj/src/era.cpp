#include "eranet/era.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace eranet::era {

std::string_view to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::TypeA: return "A";
    case TopologyKind::TypeB: return "B";
    case TopologyKind::Degenerate: return "degenerate";
  }
  return "?";
}

std::string_view to_string(SkipReason reason) {
  switch (reason) {
    case SkipReason::DegenerateTopology: return "degenerate_topology";
    case SkipReason::EmptyInterval: return "empty_interval";
    case SkipReason::EmptyBackground: return "empty_background";
  }
  return "?";
}

void EraConfig::validate() const {
  if (!(edge_fraction > 0.0 && edge_fraction < 0.5)) {
    throw std::invalid_argument("edge_fraction must lie in (0, 0.5)");
  }
  if (box_margin < 0) throw std::invalid_argument("box_margin must be nonnegative");
  if (min_component_px < 1) throw std::invalid_argument("min_component_px must be positive");
}

ClassMask meniscus_mask(const ClassMask& mask, const std::set<int>& classes) {
  ClassMask out(mask.height, mask.width, 2);
  for (std::size_t i = 0; i < mask.data.size(); ++i) out.data[i] = classes.count(mask.data[i]) ? 1 : 0;
  return out;
}

namespace {

// Component id per pixel (-1 outside), ids in scan order of first pixel.
int label_components(const ClassMask& binary, std::vector<int>& label) {
  const int h = binary.height, w = binary.width;
  label.assign(binary.data.size(), -1);
  std::vector<int> stack;
  int count = 0;
  for (int start = 0; start < h * w; ++start) {
    if (binary.data[start] == 0 || label[start] >= 0) continue;
    const int id = count++;
    stack.assign(1, start);
    label[start] = id;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int y = p / w, x = p % w;
      const int nbrs[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (auto [ny, nx] : nbrs) {
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        const int q = ny * w + nx;
        if (binary.data[q] != 0 && label[q] < 0) {
          label[q] = id;
          stack.push_back(q);
        }
      }
    }
  }
  return count;
}

ClassMask component_mask(const std::vector<int>& label, int id, int h, int w) {
  ClassMask m(h, w, 2);
  for (std::size_t i = 0; i < label.size(); ++i) m.data[i] = label[i] == id ? 1 : 0;
  return m;
}

}  // namespace

std::vector<ClassMask> connected_components(const ClassMask& binary) {
  std::vector<int> label;
  const int n = label_components(binary, label);
  std::vector<ClassMask> out;
  out.reserve(n);
  for (int id = 0; id < n; ++id) out.push_back(component_mask(label, id, binary.height, binary.width));
  return out;
}

namespace {

struct PieceStats {
  std::size_t area = 0;
  double cx = 0.0, cy = 0.0;
  int min_x = std::numeric_limits<int>::max();
  int max_x = std::numeric_limits<int>::min();
};

PieceStats stats_of(const ClassMask& piece) {
  PieceStats s;
  for (int y = 0; y < piece.height; ++y) {
    for (int x = 0; x < piece.width; ++x) {
      if (!piece.at(y, x)) continue;
      ++s.area;
      s.cx += x;
      s.cy += y;
      s.min_x = std::min(s.min_x, x);
      s.max_x = std::max(s.max_x, x);
    }
  }
  if (s.area > 0) {
    s.cx /= double(s.area);
    s.cy /= double(s.area);
  }
  return s;
}

// Scan for the pixel minimising `key` (lexicographic pair) over pixels of
// `piece` accepted by `keep`.
template <typename Key, typename Keep>
std::optional<Pixel> scan_best(const ClassMask& piece, Key key, Keep keep) {
  std::optional<Pixel> best;
  decltype(key(0, 0)) best_key{};
  for (int y = 0; y < piece.height; ++y) {
    for (int x = 0; x < piece.width; ++x) {
      if (!piece.at(y, x) || !keep(x)) continue;
      const auto k = key(x, y);
      if (!best || k < best_key) {
        best = Pixel{x, y};
        best_key = k;
      }
    }
  }
  return best;
}

using Key = std::pair<int, int>;

}  // namespace

MeniscusTopology classify_topology(const ClassMask& meniscus, const EraConfig& cfg) {
  std::vector<int> label;
  const int n = label_components(meniscus, label);
  std::vector<PieceStats> stats(n);
  for (int y = 0; y < meniscus.height; ++y) {
    for (int x = 0; x < meniscus.width; ++x) {
      const int id = label[static_cast<std::size_t>(y) * meniscus.width + x];
      if (id < 0) continue;
      auto& s = stats[id];
      ++s.area;
      s.cx += x;
      s.cy += y;
      s.min_x = std::min(s.min_x, x);
      s.max_x = std::max(s.max_x, x);
    }
  }
  std::vector<std::pair<ClassMask, PieceStats>> kept;
  for (int id = 0; id < n; ++id) {
    auto s = stats[id];
    if (s.area < static_cast<std::size_t>(cfg.min_component_px)) continue;
    s.cx /= double(s.area);
    s.cy /= double(s.area);
    kept.emplace_back(component_mask(label, id, meniscus.height, meniscus.width), s);
  }
  MeniscusTopology topo;
  if (kept.empty()) return topo;
  if (kept.size() == 1) {
    topo.kind = TopologyKind::TypeA;
    topo.pieces.push_back(std::move(kept.front().first));
    return topo;
  }
  // two largest; stable sort keeps scan order among equal areas
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second.area > b.second.area; });
  kept.resize(2);
  const bool swap = std::pair(kept[1].second.cx, kept[1].second.cy) <
                    std::pair(kept[0].second.cx, kept[0].second.cy);
  if (swap) std::swap(kept[0], kept[1]);
  topo.kind = TopologyKind::TypeB;
  topo.pieces.push_back(std::move(kept[0].first));
  topo.pieces.push_back(std::move(kept[1].first));
  return topo;
}

ExtremePoints extreme_points(const MeniscusTopology& topology) {
  if (topology.kind == TopologyKind::Degenerate || topology.pieces.empty()) {
    throw std::invalid_argument("extreme points of a degenerate topology");
  }
  const auto& left = topology.left();
  const auto& right = topology.right();
  auto any = [](int) { return true; };
  ExtremePoints ep;
  ep.fl = *scan_best(left, [](int x, int y) { return Key{x, y}; }, any);
  ep.fr = *scan_best(right, [](int x, int y) { return Key{-x, y}; }, any);

  auto top_min_x = [](int x, int y) { return Key{y, x}; };
  auto bottom_min_x = [](int x, int y) { return Key{-y, x}; };
  if (topology.kind == TopologyKind::TypeB) {
    auto top_max_x = [](int x, int y) { return Key{y, -x}; };
    auto bottom_max_x = [](int x, int y) { return Key{-y, -x}; };
    ep.ul = *scan_best(left, top_min_x, any);
    ep.bl = *scan_best(left, bottom_min_x, any);
    ep.ur = *scan_best(right, top_max_x, any);
    ep.br = *scan_best(right, bottom_max_x, any);
    return ep;
  }

  const int x_mid = (ep.fl.x + ep.fr.x) / 2;
  auto left_half = [x_mid](int x) { return x <= x_mid; };
  auto right_half = [x_mid](int x) { return x > x_mid; };
  ep.ul = *scan_best(left, top_min_x, left_half);
  ep.bl = *scan_best(left, bottom_min_x, left_half);
  // a single-column piece has no pixels right of the midline
  ep.ur = scan_best(left, top_min_x, right_half).value_or(ep.ul);
  ep.br = scan_best(left, bottom_min_x, right_half).value_or(ep.bl);
  return ep;
}

std::pair<int, int> open_integer_interval(double lo, double hi) {
  constexpr double tol = 1e-9;
  const int a = static_cast<int>(std::floor(lo + tol)) + 1;
  const int b = static_cast<int>(std::ceil(hi - tol)) - 1;
  return {a, b};
}

std::optional<std::pair<int, int>> select_replacement_points(const ExtremePoints& ep,
                                                             const MeniscusTopology& topology,
                                                             const EraConfig& cfg, Rng& rng) {
  double d_left = ep.fr.x - ep.fl.x;
  double d_right = d_left;
  if (topology.kind == TopologyKind::TypeB) {
    const auto sl = stats_of(topology.left());
    const auto sr = stats_of(topology.right());
    d_left = sl.max_x - sl.min_x;
    d_right = sr.max_x - sr.min_x;
  }
  const double f = cfg.edge_fraction;
  const auto [l0, l1] = open_integer_interval(ep.fl.x, ep.fl.x + f * d_left);
  const auto [r0, r1] = open_integer_interval(ep.fr.x - f * d_right, ep.fr.x);
  if (l0 > l1 || r0 > r1) return std::nullopt;
  const int x_rl = std::uniform_int_distribution<int>(l0, l1)(rng);
  const int x_rr = std::uniform_int_distribution<int>(r0, r1)(rng);
  if (x_rl >= x_rr) return std::nullopt;
  return std::pair{x_rl, x_rr};
}

std::pair<Box, Box> build_bounding_boxes(const ExtremePoints& ep, const EraConfig& cfg, int height,
                                         int width) {
  auto clamp_box = [&](int xa, int xb, int ya, int yb) {
    Box b;
    b.x0 = std::clamp(std::min(xa, xb), 0, width - 1);
    b.x1 = std::clamp(std::max(xa, xb), 0, width - 1);
    b.y0 = std::clamp(std::min(ya, yb), 0, height - 1);
    b.y1 = std::clamp(std::max(ya, yb), 0, height - 1);
    return b;
  };
  const Box left =
      clamp_box(ep.fl.x - cfg.box_margin, std::max(ep.ul.x, ep.bl.x), ep.ul.y, ep.bl.y);
  const Box right =
      clamp_box(std::min(ep.ur.x, ep.br.x), ep.fr.x + cfg.box_margin, ep.ur.y, ep.br.y);
  return {left, right};
}

std::optional<IntensityRange> background_range(const Image2D& image, const ClassMask& meniscus,
                                               const Box& box) {
  std::optional<IntensityRange> r;
  for (int y = box.y0; y <= box.y1; ++y) {
    for (int x = box.x0; x <= box.x1; ++x) {
      if (meniscus.at(y, x)) continue;
      const float v = image.at(y, x);
      if (!r) {
        r = IntensityRange{v, v};
      } else {
        r->lo = std::min(r->lo, v);
        r->hi = std::max(r->hi, v);
      }
    }
  }
  return r;
}

namespace {

float draw_in(const IntensityRange& range, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const float v = range.lo + static_cast<float>(u) * (range.hi - range.lo);
  return std::clamp(v, range.lo, range.hi);
}

EraResult passthrough(const Image2D& image, const ClassMask& mask, SkipReason why) {
  return EraResult{image, mask, std::nullopt, why};
}

}  // namespace

EraResult apply_era(const Image2D& image, const ClassMask& mask, const std::set<int>& meniscus_classes,
                    const EraConfig& cfg, Rng& rng) {
  if (image.height != mask.height || image.width != mask.width) {
    throw std::invalid_argument("image and mask dimensions differ");
  }
  cfg.validate();
  const ClassMask men = meniscus_mask(mask, meniscus_classes);
  auto topology = classify_topology(men, cfg);
  if (topology.kind == TopologyKind::Degenerate) {
    return passthrough(image, mask, SkipReason::DegenerateTopology);
  }
  const ExtremePoints ep = extreme_points(topology);
  const auto points = select_replacement_points(ep, topology, cfg, rng);
  if (!points) return passthrough(image, mask, SkipReason::EmptyInterval);
  const auto [box_l, box_r] = build_bounding_boxes(ep, cfg, image.height, image.width);
  const auto range_l = background_range(image, men, box_l);
  const auto range_r = background_range(image, men, box_r);
  if (!range_l || !range_r) return passthrough(image, mask, SkipReason::EmptyBackground);

  EraPlan plan;
  plan.extremes = ep;
  plan.d = ep.fr.x - ep.fl.x;
  if (topology.kind == TopologyKind::TypeB) {
    const auto sl = stats_of(topology.left());
    const auto sr = stats_of(topology.right());
    plan.d_left = sl.max_x - sl.min_x;
    plan.d_right = sr.max_x - sr.min_x;
  } else {
    plan.d_left = plan.d_right = plan.d;
  }
  plan.topology = std::move(topology);
  plan.x_rl = points->first;
  plan.x_rr = points->second;
  plan.box_left = box_l;
  plan.box_right = box_r;
  plan.range_left = *range_l;
  plan.range_right = *range_r;

  EraResult out{image, mask, std::nullopt, std::nullopt};
  for (int y = box_l.y0; y <= box_l.y1; ++y) {
    for (int x = box_l.x0; x <= std::min(box_l.x1, plan.x_rl - 1); ++x) {
      out.image.at(y, x) = draw_in(plan.range_left, rng);
    }
  }
  for (int y = box_r.y0; y <= box_r.y1; ++y) {
    for (int x = std::max(box_r.x0, plan.x_rr + 1); x <= box_r.x1; ++x) {
      out.image.at(y, x) = draw_in(plan.range_right, rng);
    }
  }
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if ((x < plan.x_rl || x > plan.x_rr) && men.at(y, x)) out.mask.at(y, x) = 0;
    }
  }
  out.plan = std::move(plan);
  return out;
}

}  // namespace eranet::era
