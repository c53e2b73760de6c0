#include "eranet/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <system_error>

namespace eranet::io {

namespace fs = std::filesystem;

namespace {

constexpr std::uint8_t kMagic[4] = {0x45, 0x52, 0x41, 0x54};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>(value & 0xff));
    value >>= 8;
  }
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

template <typename F, typename Bits>
void put_floats(std::vector<std::uint8_t>& out, const std::vector<F>& values) {
  for (F f : values) put_le(out, std::bit_cast<Bits>(f));
}

template <typename F, typename Bits>
std::vector<F> get_floats(const std::uint8_t* p, std::size_t n) {
  std::vector<F> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<F>(get_le<Bits>(p + i * sizeof(Bits)));
  return v;
}

std::size_t product(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

}  // namespace

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::U8: return 1;
    case DType::F32: return 4;
    case DType::F64: return 8;
  }
  throw TensorError(TensorErrorCode::UnknownDtype, "unknown dtype");
}

DType Tensor::dtype() const {
  switch (data.index()) {
    case 0: return DType::U8;
    case 1: return DType::F32;
    default: return DType::F64;
  }
}

std::size_t Tensor::element_count() const {
  return std::visit([](const auto& v) { return v.size(); }, data);
}

std::string_view to_string(TensorErrorCode code) {
  switch (code) {
    case TensorErrorCode::Io: return "io";
    case TensorErrorCode::BadMagic: return "bad-magic";
    case TensorErrorCode::UnsupportedVersion: return "unsupported-version";
    case TensorErrorCode::UnknownDtype: return "unknown-dtype";
    case TensorErrorCode::Truncated: return "truncated";
    case TensorErrorCode::TrailingBytes: return "trailing-bytes";
    case TensorErrorCode::ShapeMismatch: return "shape-mismatch";
  }
  return "unknown";
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.dims.size() > 255) throw TensorError(TensorErrorCode::ShapeMismatch, "too many dimensions");
  if (product(t.dims) != t.element_count()) {
    throw TensorError(TensorErrorCode::ShapeMismatch, "dims do not match payload length");
  }
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kTensorVersion);
  out.push_back(static_cast<std::uint8_t>(t.dtype()));
  out.push_back(static_cast<std::uint8_t>(t.dims.size()));
  for (auto d : t.dims) put_le<std::uint32_t>(out, d);
  out.reserve(out.size() + t.element_count() * dtype_size(t.dtype()));
  std::visit(
      [&](const auto& v) {
        using V = typename std::decay_t<decltype(v)>::value_type;
        if constexpr (std::is_same_v<V, std::uint8_t>) {
          out.insert(out.end(), v.begin(), v.end());
        } else if constexpr (std::is_same_v<V, float>) {
          put_floats<float, std::uint32_t>(out, v);
        } else {
          put_floats<double, std::uint64_t>(out, v);
        }
      },
      t.data);
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw TensorError(TensorErrorCode::BadMagic, "not an ERAT tensor (bad magic)");
  }
  if (bytes.size() < 7) throw TensorError(TensorErrorCode::Truncated, "truncated tensor header");
  if (bytes[4] != kTensorVersion) {
    throw TensorError(TensorErrorCode::UnsupportedVersion,
                      "unsupported tensor version " + std::to_string(bytes[4]));
  }
  const std::uint8_t code = bytes[5];
  if (code < 1 || code > 3) {
    throw TensorError(TensorErrorCode::UnknownDtype, "unknown dtype code " + std::to_string(code));
  }
  const auto dtype = static_cast<DType>(code);
  const std::size_t ndim = bytes[6];
  const std::size_t header = 7 + 4 * ndim;
  if (bytes.size() < header) throw TensorError(TensorErrorCode::Truncated, "truncated tensor dims");
  Tensor t;
  for (std::size_t i = 0; i < ndim; ++i) t.dims.push_back(get_le<std::uint32_t>(&bytes[7 + 4 * i]));
  const std::size_t n = product(t.dims);
  const std::size_t payload = n * dtype_size(dtype);
  if (bytes.size() < header + payload) {
    throw TensorError(TensorErrorCode::Truncated, "tensor payload truncated: expected " +
                                                      std::to_string(payload) + " bytes, found " +
                                                      std::to_string(bytes.size() - header));
  }
  if (bytes.size() > header + payload) {
    throw TensorError(TensorErrorCode::TrailingBytes, "unexpected bytes after tensor payload");
  }
  const std::uint8_t* p = bytes.data() + header;
  switch (dtype) {
    case DType::U8: t.data = std::vector<std::uint8_t>(p, p + n); break;
    case DType::F32: t.data = get_floats<float, std::uint32_t>(p, n); break;
    case DType::F64: t.data = get_floats<double, std::uint64_t>(p, n); break;
  }
  return t;
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw TensorError(TensorErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw TensorError(TensorErrorCode::Io, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw TensorError(TensorErrorCode::Io, "rename to " + path.string() + " failed: " + ec.message());
  }
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TensorError(TensorErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string read_text(const fs::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

void write_tensor(const fs::path& path, const Tensor& t) { write_file_atomic(path, encode_tensor(t)); }

Tensor read_tensor(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_tensor(bytes);
  } catch (const TensorError& e) {
    throw TensorError(e.code(), path.string() + ": " + e.what());
  }
}

Tensor to_tensor(const Image2D& image) {
  return Tensor{{static_cast<std::uint32_t>(image.height), static_cast<std::uint32_t>(image.width)},
                image.data};
}

Tensor to_tensor(const ClassMask& mask) {
  return Tensor{{static_cast<std::uint32_t>(mask.height), static_cast<std::uint32_t>(mask.width)},
                mask.data};
}

Tensor to_tensor(const Planes<float>& planes) {
  return Tensor{{static_cast<std::uint32_t>(planes.channels), static_cast<std::uint32_t>(planes.height),
                 static_cast<std::uint32_t>(planes.width)},
                planes.data};
}

Image2D to_image(const Tensor& t) {
  if (t.dims.size() != 2) throw TensorError(TensorErrorCode::ShapeMismatch, "image tensor must be 2-D");
  Image2D img(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]));
  std::visit(
      [&](const auto& v) {
        using V = typename std::decay_t<decltype(v)>::value_type;
        for (std::size_t i = 0; i < v.size(); ++i) {
          if constexpr (std::is_same_v<V, std::uint8_t>) {
            img.data[i] = static_cast<float>(v[i]) / 255.0f;
          } else {
            img.data[i] = static_cast<float>(v[i]);
          }
        }
      },
      t.data);
  return img;
}

ClassMask to_mask(const Tensor& t, int num_classes) {
  if (t.dims.size() != 2) throw TensorError(TensorErrorCode::ShapeMismatch, "mask tensor must be 2-D");
  const auto* v = std::get_if<std::vector<std::uint8_t>>(&t.data);
  if (v == nullptr) throw TensorError(TensorErrorCode::ShapeMismatch, "mask tensor must be u8");
  if (num_classes <= 0) {
    const int top = v->empty() ? 0 : *std::max_element(v->begin(), v->end());
    num_classes = std::max(2, top + 1);
  }
  ClassMask m(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), num_classes);
  m.data = *v;
  m.validate();
  return m;
}

void write_pgm(const fs::path& path, const Tensor& t) {
  if (t.dims.size() != 2 && t.dims.size() != 3) {
    throw TensorError(TensorErrorCode::ShapeMismatch, "export-pgm needs a 2-D or 3-D tensor");
  }
  const std::size_t h = t.dims[t.dims.size() - 2];
  const std::size_t w = t.dims[t.dims.size() - 1];
  std::vector<double> v(h * w);
  std::visit(
      [&](const auto& src) {
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(src[i]);
      },
      t.data);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double x : v) {
    if (!std::isfinite(x)) continue;
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (double x : v) {
    double s = (hi > lo && std::isfinite(x)) ? (x - lo) / (hi - lo) : 0.0;
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(s, 0.0, 1.0) * 255.0)));
  }
  write_file_atomic(path, out);
}

std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

void Manifest::validate() const {
  std::vector<std::string> ids;
  for (const auto& e : entries) {
    if (e.id.empty()) throw std::invalid_argument("manifest entry with empty id");
    if (e.labeled && !e.label) throw std::invalid_argument("labeled entry " + e.id + " has no label path");
    if (e.labeled && e.split == Split::Test) {
      throw std::invalid_argument("test entry " + e.id + " is marked labeled");
    }
    ids.push_back(e.id);
  }
  std::sort(ids.begin(), ids.end());
  if (auto it = std::adjacent_find(ids.begin(), ids.end()); it != ids.end()) {
    throw std::invalid_argument("duplicate manifest id " + *it);
  }
}

Json Manifest::to_json() const {
  Json j;
  j["name"] = name;
  j["seed"] = seed;
  j["contrast"] = contrast;
  j["num_classes"] = num_classes;
  j["entries"] = Json::array();
  for (const auto& e : entries) {
    j["entries"].push_back({{"id", e.id},
                            {"image", e.image},
                            {"label", e.label ? Json(*e.label) : Json(nullptr)},
                            {"split", to_string(e.split)},
                            {"labeled", e.labeled},
                            {"eval_only_label", e.eval_only_label}});
  }
  return j;
}

Manifest Manifest::from_json(const Json& j) {
  Manifest m;
  m.name = j.value("name", std::string{});
  m.seed = j.value("seed", std::uint64_t{0});
  m.contrast = j.value("contrast", std::string{});
  m.num_classes = j.value("num_classes", 4);
  for (const auto& e : j.at("entries")) {
    ManifestEntry me;
    me.id = e.at("id").get<std::string>();
    me.image = e.at("image").get<std::string>();
    if (e.contains("label") && !e.at("label").is_null()) me.label = e.at("label").get<std::string>();
    me.split = split_from_string(e.at("split").get<std::string>());
    me.labeled = e.at("labeled").get<bool>();
    me.eval_only_label = e.value("eval_only_label", false);
    m.entries.push_back(std::move(me));
  }
  m.validate();
  return m;
}

void write_manifest(const fs::path& path, const Manifest& m) {
  m.validate();
  write_text_atomic(path, m.to_json().dump(2) + "\n");
}

Manifest read_manifest(const fs::path& path) { return Manifest::from_json(Json::parse(read_text(path))); }

std::vector<const Sample*> Dataset::labeled() const {
  std::vector<const Sample*> out;
  for (const auto& s : samples)
    if (s.split == Split::Train && s.labeled) out.push_back(&s);
  return out;
}

std::vector<const Sample*> Dataset::unlabeled() const {
  std::vector<const Sample*> out;
  for (const auto& s : samples)
    if (s.split == Split::Train && !s.labeled) out.push_back(&s);
  return out;
}

std::vector<const Sample*> Dataset::test() const {
  std::vector<const Sample*> out;
  for (const auto& s : samples)
    if (s.split == Split::Test && s.has_label) out.push_back(&s);
  return out;
}

Dataset load_dataset(const fs::path& manifest_path) {
  const Manifest m = read_manifest(manifest_path);
  const fs::path root = manifest_path.parent_path();
  Dataset d;
  d.name = m.name;
  d.seed = m.seed;
  d.contrast = m.contrast;
  d.num_classes = m.num_classes;
  for (const auto& e : m.entries) {
    Sample s;
    s.id = e.id;
    s.split = e.split;
    s.labeled = e.labeled;
    s.image = to_image(read_tensor(root / e.image));
    if (e.label) {
      s.label = to_mask(read_tensor(root / *e.label), m.num_classes);
      s.has_label = true;
      if (!s.label.same_shape(ClassMask(s.image.height, s.image.width, 2))) {
        throw std::invalid_argument("label of " + e.id + " does not match its image size");
      }
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

Manifest save_dataset(const Dataset& dataset, const fs::path& dir) {
  Manifest m;
  m.name = dataset.name;
  m.seed = dataset.seed;
  m.contrast = dataset.contrast;
  m.num_classes = dataset.num_classes;
  for (const auto& s : dataset.samples) {
    ManifestEntry e;
    e.id = s.id;
    e.image = "images/" + s.id + ".erat";
    write_tensor(dir / e.image, to_tensor(s.image));
    if (s.has_label) {
      e.label = "labels/" + s.id + ".erat";
      write_tensor(dir / *e.label, to_tensor(s.label));
    }
    e.split = s.split;
    e.labeled = s.labeled;
    e.eval_only_label = s.has_label && !s.labeled;
    m.entries.push_back(std::move(e));
  }
  write_manifest(dir / "manifest.json", m);
  return m;
}

void save_checkpoint(const fs::path& dir, const net::ModelParams& params, const CheckpointMeta& meta,
                     const net::OptimizerState<float>* optimizer) {
  fs::create_directories(dir);
  const auto n = static_cast<std::uint32_t>(params.values.size());
  write_tensor(dir / "params.erat", Tensor{{n}, params.values});
  Json j{{"k", params.k},
         {"d", params.d},
         {"c", params.c},
         {"stage", meta.stage},
         {"epoch", meta.epoch},
         {"seed", meta.seed},
         {"config_hash", meta.config_hash}};
  if (optimizer != nullptr) {
    write_tensor(dir / "adam_m.erat", Tensor{{n}, optimizer->m});
    write_tensor(dir / "adam_v.erat", Tensor{{n}, optimizer->v});
    j["adam_step"] = optimizer->step;
  }
  write_text_atomic(dir / "checkpoint.json", j.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  const Json j = Json::parse(read_text(dir / "checkpoint.json"));
  LoadedCheckpoint out;
  out.params = net::ModelParams(j.at("k").get<int>(), j.at("d").get<int>(), j.at("c").get<int>());
  const Tensor t = read_tensor(dir / "params.erat");
  const auto* v = std::get_if<std::vector<float>>(&t.data);
  if (v == nullptr || v->size() != out.params.values.size()) {
    throw TensorError(TensorErrorCode::ShapeMismatch, "checkpoint parameters do not match recorded shape");
  }
  out.params.values = *v;
  out.meta.stage = j.value("stage", std::string{});
  out.meta.epoch = j.value("epoch", 0);
  out.meta.seed = j.value("seed", std::uint64_t{0});
  out.meta.config_hash = j.value("config_hash", std::string{});
  if (j.contains("adam_step")) {
    net::OptimizerState<float> opt(v->size());
    const Tensor m = read_tensor(dir / "adam_m.erat");
    const Tensor vv = read_tensor(dir / "adam_v.erat");
    opt.m = std::get<std::vector<float>>(m.data);
    opt.v = std::get<std::vector<float>>(vv.data);
    opt.step = j.at("adam_step").get<std::int64_t>();
    out.optimizer = std::move(opt);
  }
  return out;
}

std::string canonical_json(const Json& j) {
  // nlohmann::json objects are std::map-backed, so dump() already emits
  // sorted keys; the explicit dump settings pin the remaining formatting.
  return j.dump(-1, ' ', false, Json::error_handler_t::strict);
}

std::string hash_json(const Json& j) {
  const std::uint64_t h = hash_tag(canonical_json(j));
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace eranet::io
