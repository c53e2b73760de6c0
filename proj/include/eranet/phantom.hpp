#pragma once

// Synthetic knee-slice phantoms: femur and tibia bone, a tibial cartilage
// band, and a wedge-profiled meniscus that is either one elongated body
// (type A) or two horns (type B).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eranet/era.hpp"
#include "eranet/grid.hpp"
#include "eranet/io.hpp"
#include "eranet/rng.hpp"

namespace eranet::phantom {

enum class Contrast { Bright, Dark };

std::string_view to_string(Contrast c);
Contrast contrast_from_string(std::string_view s);

inline constexpr int kLateralMeniscus = 1;
inline constexpr int kMedialMeniscus = 2;
inline constexpr int kTibialCartilage = 3;

/// Intensity levels before noise.
struct Levels {
  float background = 0.4f;
  float bone = 0.2f;       // background - 0.2
  float cartilage = 0.6f;  // background + 0.2
  float lateral = 0.7f;    // background + 0.3 (bright) / - 0.25 (dark)
  float medial = 0.85f;    // background + 0.45 (bright) / - 0.35 (dark)
};

Levels levels_for(Contrast c);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Geometry ranges are in pixels of a 64x64 slice and scale with `size`.
struct PhantomConfig {
  int size = 64;
  int num_classes = 4;
  double topology_mix = 0.5;  // probability of a type-B slice
  double medial_fraction = 0.5;
  Contrast contrast = Contrast::Bright;
  double noise_std = 0.05;

  Range center_offset{-4.0, 4.0};
  Range plateau_row{42.0, 46.0};
  Range cartilage_rows{2.0, 4.0};
  Range horn_length{9.0, 13.0};
  Range horn_thickness{4.0, 7.0};
  Range horn_inset{20.0, 25.0};  // joint centre to outer horn tip
  Range body_half_length{15.0, 20.0};
  Range body_thickness{3.0, 5.0};
  Range wedge_peak{0.3, 0.7};  // apex position along the wedge, 0 = left tip
  Range femur_radius{22.0, 26.0};
  // Per-slice contrast: v = background + gain * (level - background) + offset.
  Range gain{1.0, 1.0};
  Range offset{0.0, 0.0};

  void validate() const;
};

struct Wedge {
  double x0 = 0.0;  // left tip
  double x1 = 0.0;  // right tip
  double peak = 0.5;
  double thickness = 0.0;
  int base_row = 0;  // lowest meniscus row

  /// Column height at pixel column x (zero outside the wedge).
  double height_at(int x) const;
};

struct SliceGeometry {
  era::TopologyKind kind = era::TopologyKind::TypeA;
  int meniscus_class = kLateralMeniscus;
  double center_x = 0.0;
  int plateau_row = 0;
  int cartilage_rows = 0;
  double femur_cx = 0.0;
  double femur_cy = 0.0;
  double femur_radius = 0.0;
  double gain = 1.0;
  double offset = 0.0;
  std::vector<Wedge> wedges;
};

struct SliceRecord {
  std::string id;
  Image2D image;
  ClassMask mask;
  SliceGeometry geometry;
  Contrast contrast = Contrast::Bright;
  std::uint64_t seed = 0;
};

/// Class mask implied by a geometry.
ClassMask rasterize(const SliceGeometry& g, int size, int num_classes);

/// Tissue intensity map (before noise) implied by a geometry.
Image2D compose_intensities(const SliceGeometry& g, int size, Contrast contrast);

/// Draws geometry then per-pixel noise from `rng`. Re-jitters up to 10 times
/// when a shape would break the 2-pixel border margin, then throws.
SliceRecord generate_slice(const PhantomConfig& cfg, std::string id, Rng& rng);

/// Deterministic in (cfg, id, master seed).
SliceRecord generate_slice(const PhantomConfig& cfg, const std::string& id, std::uint64_t master_seed);

struct DatasetOptions {
  int count = 60;       // training slices
  int test_count = 20;  // held-out slices
  double labeled_fraction = 0.1;
  std::uint64_t seed = 1;
  std::string name = "phantom";
};

/// Number of labeled slices for a pool of `count`: ceil(count * fraction).
int labeled_count(int count, double fraction);

/// Marks the first ceil(n * fraction) training samples of a seeded shuffle as
/// labeled; everything else in the training split becomes unlabeled with an
/// evaluation-only label.
void assign_labeled(io::Dataset& dataset, double fraction, std::uint64_t seed);

io::Dataset make_dataset(const PhantomConfig& cfg, const DatasetOptions& opts);

/// Writes images/, labels/, and manifest.json under `out_dir`.
io::Manifest generate_dataset(const PhantomConfig& cfg, const DatasetOptions& opts,
                              const std::filesystem::path& out_dir);

}  // namespace eranet::phantom
