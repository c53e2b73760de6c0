#pragma once

// Edge replacement augmentation: truncates the meniscus at both horizontal
// ends and fills the cut-off region with noise drawn from the intensity
// range of the surrounding background.

#include <optional>
#include <set>
#include <string_view>
#include <utility>
#include <vector>

#include "eranet/grid.hpp"
#include "eranet/rng.hpp"

namespace eranet::era {

enum class TopologyKind { TypeA, TypeB, Degenerate };

std::string_view to_string(TopologyKind kind);

/// Pixel coordinate, x to the right and y downward.
struct Pixel {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

struct MeniscusTopology {
  TopologyKind kind = TopologyKind::Degenerate;
  // TypeA: one piece. TypeB: {left, right} ordered by centroid x.
  std::vector<ClassMask> pieces;

  const ClassMask& left() const { return pieces.front(); }
  const ClassMask& right() const { return pieces.back(); }
};

struct ExtremePoints {
  Pixel fl, ul, bl, fr, ur, br;
};

/// Inclusive pixel rectangle.
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  friend bool operator==(const Box&, const Box&) = default;
};

struct IntensityRange {
  float lo = 0.0f;
  float hi = 0.0f;
};

struct EraConfig {
  double edge_fraction = 0.3;
  int box_margin = 5;
  int min_component_px = 5;

  void validate() const;
};

struct EraPlan {
  MeniscusTopology topology;
  ExtremePoints extremes;
  int d = 0;        // x_FR - x_FL
  int d_left = 0;   // horizontal extent of the left piece (TypeB)
  int d_right = 0;  // horizontal extent of the right piece (TypeB)
  int x_rl = 0;
  int x_rr = 0;
  Box box_left;
  Box box_right;
  IntensityRange range_left;
  IntensityRange range_right;
};

/// Why an augmentation was skipped.
enum class SkipReason { DegenerateTopology, EmptyInterval, EmptyBackground };

std::string_view to_string(SkipReason reason);

struct EraResult {
  Image2D image;
  ClassMask mask;
  std::optional<EraPlan> plan;       // set when applied
  std::optional<SkipReason> skipped;  // set when the input passed through unchanged

  bool applied() const { return plan.has_value(); }
};

/// Union of `classes` as a binary mask.
ClassMask meniscus_mask(const ClassMask& mask, const std::set<int>& classes);

/// 4-connected components. Returns one binary mask per component in scan
/// order of their first pixel.
std::vector<ClassMask> connected_components(const ClassMask& binary);

MeniscusTopology classify_topology(const ClassMask& meniscus, const EraConfig& cfg);

/// Throws std::invalid_argument on a Degenerate topology.
ExtremePoints extreme_points(const MeniscusTopology& topology);

/// Uniform integer draws strictly inside the two edge intervals; nullopt when
/// either interval holds no integer or the draws would not satisfy x_RL < x_RR.
std::optional<std::pair<int, int>> select_replacement_points(const ExtremePoints& ep,
                                                             const MeniscusTopology& topology,
                                                             const EraConfig& cfg, Rng& rng);

/// Integers n with lo < n < hi, tolerant of round-off at integral bounds.
std::pair<int, int> open_integer_interval(double lo, double hi);

std::pair<Box, Box> build_bounding_boxes(const ExtremePoints& ep, const EraConfig& cfg, int height,
                                         int width);

/// Min/max intensity over non-meniscus pixels in `box`; nullopt when the box
/// holds only meniscus pixels.
std::optional<IntensityRange> background_range(const Image2D& image, const ClassMask& meniscus,
                                               const Box& box);

/// Full augmentation. Draw order on `rng`: x_RL, x_RR, then one value per
/// replaced pixel, left box before right box, row-major within each box.
EraResult apply_era(const Image2D& image, const ClassMask& mask, const std::set<int>& meniscus_classes,
                    const EraConfig& cfg, Rng& rng);

}  // namespace eranet::era
