#pragma once

// File formats: the ERAT tensor container, dataset manifests, model
// checkpoints, PGM export, and canonical JSON hashing.
//
// ERAT layout: "ERAT" | version u8 = 1 | dtype u8 (1 u8, 2 f32, 3 f64) |
// ndim u8 | ndim x u32 LE dims | LE row-major payload.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "eranet/grid.hpp"
#include "eranet/net.hpp"

namespace eranet::io {

using Json = nlohmann::json;

enum class DType : std::uint8_t { U8 = 1, F32 = 2, F64 = 3 };

std::size_t dtype_size(DType t);

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::variant<std::vector<std::uint8_t>, std::vector<float>, std::vector<double>> data;

  DType dtype() const;
  std::size_t element_count() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline constexpr std::uint8_t kTensorVersion = 1;

enum class TensorErrorCode {
  Io = 1,
  BadMagic = 2,
  UnsupportedVersion = 3,
  UnknownDtype = 4,
  Truncated = 5,
  TrailingBytes = 6,
  ShapeMismatch = 7,
};

std::string_view to_string(TensorErrorCode code);

class TensorError : public std::runtime_error {
 public:
  TensorError(TensorErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  TensorErrorCode code() const { return code_; }

 private:
  TensorErrorCode code_;
};

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

Tensor to_tensor(const Image2D& image);
Tensor to_tensor(const ClassMask& mask);
Tensor to_tensor(const Planes<float>& planes);
Image2D to_image(const Tensor& t);
/// `num_classes` of 0 infers max label + 1 (at least 2).
ClassMask to_mask(const Tensor& t, int num_classes = 0);

/// Whole-file replace through a temporary sibling and rename.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

/// Binary 8-bit PGM of a 2-D tensor (or the first plane of a 3-D one),
/// min-max scaled; a constant tensor maps to 0.
void write_pgm(const std::filesystem::path& path, const Tensor& t);

enum class Split { Train, Test };

std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct ManifestEntry {
  std::string id;
  std::string image;                 // relative to the manifest directory
  std::optional<std::string> label;  // relative to the manifest directory
  Split split = Split::Train;
  bool labeled = false;
  bool eval_only_label = false;
};

struct Manifest {
  std::string name;
  std::uint64_t seed = 0;
  std::string contrast;
  int num_classes = 4;
  std::vector<ManifestEntry> entries;

  /// Throws std::invalid_argument on duplicate ids, labeled entries without
  /// a label path, or labeled test entries.
  void validate() const;
  Json to_json() const;
  static Manifest from_json(const Json& j);
};

void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

struct Sample {
  std::string id;
  Image2D image;
  ClassMask label;  // empty when has_label is false
  bool has_label = false;
  bool labeled = false;
  Split split = Split::Train;
};

struct Dataset {
  std::string name;
  std::uint64_t seed = 0;
  std::string contrast;
  int num_classes = 4;
  std::vector<Sample> samples;

  std::vector<const Sample*> labeled() const;    // train, labeled
  std::vector<const Sample*> unlabeled() const;  // train, not labeled
  std::vector<const Sample*> test() const;       // test split with labels
};

/// Loads every tensor listed in a manifest. Paths resolve against the
/// manifest's directory.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes images/<id>.erat, labels/<id>.erat, and manifest.json.
Manifest save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

struct CheckpointMeta {
  std::string stage;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// params.erat (f32 flat weights), optional adam_m.erat/adam_v.erat, and
/// checkpoint.json holding shapes, step count, and metadata.
void save_checkpoint(const std::filesystem::path& dir, const net::ModelParams& params,
                     const CheckpointMeta& meta,
                     const net::OptimizerState<float>* optimizer = nullptr);

struct LoadedCheckpoint {
  net::ModelParams params;
  CheckpointMeta meta;
  std::optional<net::OptimizerState<float>> optimizer;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

/// Sorted-key compact JSON dump; independent of insertion order.
std::string canonical_json(const Json& j);

/// 16 hex digits of FNV-1a over canonical_json(j).
std::string hash_json(const Json& j);

}  // namespace eranet::io
