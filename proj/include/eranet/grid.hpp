#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace eranet {

/// Row-major single-channel intensity image, values normalized to [0, 1].
struct Image2D {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image2D() = default;
  Image2D(int h, int w, float fill = 0.0f);

  float& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return data.size(); }

  /// Throws std::invalid_argument when the size, extent, or finiteness invariants fail.
  void validate() const;
};

/// Row-major per-pixel class labels in [0, num_classes). Class 0 is background.
/// A binary mask is a ClassMask with num_classes == 2.
struct ClassMask {
  int height = 0;
  int width = 0;
  int num_classes = 2;
  std::vector<std::uint8_t> data;

  ClassMask() = default;
  ClassMask(int h, int w, int classes, std::uint8_t fill = 0);

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const ClassMask& other) const {
    return height == other.height && width == other.width;
  }

  /// One-vs-rest binary mask of `cls`.
  ClassMask binary(int cls) const;
  std::size_t count(int cls) const;
  void validate() const;

  friend bool operator==(const ClassMask&, const ClassMask&) = default;
};

/// Channel-major stack of planes: data[(c * height + y) * width + x].
template <typename T>
struct Planes {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Planes() = default;
  Planes(int c, int h, int w, T fill = T{0})
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  T at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  T& at(int c, std::size_t i) { return data[c * plane_size() + i]; }
  T at(int c, std::size_t i) const { return data[c * plane_size() + i]; }
  std::span<T> plane(int c) { return {data.data() + c * plane_size(), plane_size()}; }
  std::span<const T> plane(int c) const { return {data.data() + c * plane_size(), plane_size()}; }
};

/// Per-pixel class probabilities, channel = class.
template <typename T>
using ProbMap = Planes<T>;

/// Hard labels by per-pixel argmax; ties go to the lowest class index.
template <typename T>
ClassMask argmax_labels(const ProbMap<T>& probs);

struct MetricReport {
  std::vector<double> per_class_dsc;   // size C, entry 0 = background (unused in means)
  std::vector<double> per_class_assd;  // size C, sentinel-substituted
  double mean_dsc = 0.0;
  double mean_assd = 0.0;
};

/// Dice overlap 2|A∩B| / (|A|+|B|) of two binary masks (nonzero = member).
/// Both empty gives 1, exactly one empty gives 0.
double dsc(const ClassMask& a, const ClassMask& b);

/// Pixels of the mask with at least one 4-neighbour outside it; the image
/// border counts as outside.
std::vector<std::pair<int, int>> surface_pixels(const ClassMask& mask);

/// Average symmetric surface distance in units of `spacing`.
/// Returns nullopt when either mask is empty.
std::optional<double> assd(const ClassMask& a, const ClassMask& b, double spacing = 1.0);

/// Per-class one-vs-rest DSC/ASSD for one slice. A class absent from both
/// masks scores DSC 1 and ASSD 0; a class absent from exactly one side gets
/// the image-diagonal sentinel.
MetricReport evaluate(const ClassMask& pred, const ClassMask& gt, double spacing = 1.0);

/// Pooled metrics over a stack of slices: overlap counts and surface-distance
/// sums accumulate across slices before dividing, the 2D analogue of
/// per-volume scoring. Surface pixels of a slice whose counterpart is empty
/// contribute the diagonal sentinel distance.
MetricReport evaluate_volume(std::span<const ClassMask> preds, std::span<const ClassMask> gts,
                             double spacing = 1.0);

/// Squared Euclidean distance from every pixel to the nearest set pixel of
/// `sites` (row-major), exact for integer grids. Unset everywhere gives +inf.
std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& sites, int height,
                                               int width);

}  // namespace eranet
