#include "eranet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

namespace eranet::phantom {

namespace {

constexpr int kMargin = 2;
constexpr int kMaxAttempts = 10;

double draw(const Range& r, double scale, Rng& rng) {
  if (r.hi <= r.lo) return r.lo * scale;
  return std::uniform_real_distribution<double>(r.lo * scale, r.hi * scale)(rng);
}

bool in_femur(const SliceGeometry& g, int x, int y) {
  if (y <= g.femur_cy) return true;
  const double dx = x - g.femur_cx;
  const double dy = y - g.femur_cy;
  return dx * dx + dy * dy <= g.femur_radius * g.femur_radius;
}

bool in_wedge(const Wedge& w, int x, int y) {
  if (y > w.base_row) return false;
  return static_cast<double>(w.base_row - y) < w.height_at(x);
}

bool fits(const SliceGeometry& g, int size) {
  for (const auto& w : g.wedges) {
    if (w.x0 < kMargin || w.x1 > size - 1 - kMargin) return false;
    if (w.base_row - static_cast<int>(std::ceil(w.thickness)) + 1 < kMargin) return false;
  }
  if (g.plateau_row > size - 1 - kMargin) return false;
  if (g.plateau_row - g.cartilage_rows < kMargin) return false;
  return true;
}

SliceGeometry draw_geometry(const PhantomConfig& cfg, Rng& rng) {
  const double s = cfg.size / 64.0;
  SliceGeometry g;
  g.kind = std::bernoulli_distribution(cfg.topology_mix)(rng) ? era::TopologyKind::TypeB
                                                              : era::TopologyKind::TypeA;
  g.meniscus_class =
      std::bernoulli_distribution(cfg.medial_fraction)(rng) ? kMedialMeniscus : kLateralMeniscus;
  g.center_x = cfg.size / 2.0 + draw(cfg.center_offset, s, rng);
  g.plateau_row = static_cast<int>(std::lround(draw(cfg.plateau_row, s, rng)));
  g.cartilage_rows = std::max(1, static_cast<int>(std::lround(draw(cfg.cartilage_rows, s, rng))));
  const int base = g.plateau_row - g.cartilage_rows - 1;
  g.femur_radius = draw(cfg.femur_radius, s, rng);
  g.femur_cx = g.center_x;
  g.gain = draw(cfg.gain, 1.0, rng);
  g.offset = draw(cfg.offset, 1.0, rng);

  if (g.kind == era::TopologyKind::TypeB) {
    for (int side = 0; side < 2; ++side) {
      Wedge w;
      const double inset = draw(cfg.horn_inset, s, rng);
      const double length = draw(cfg.horn_length, s, rng);
      w.thickness = draw(cfg.horn_thickness, s, rng);
      const double peak = draw(cfg.wedge_peak, 1.0, rng);
      w.base_row = base;
      if (side == 0) {
        w.x0 = g.center_x - inset;
        w.x1 = w.x0 + length;
        w.peak = peak;
      } else {
        w.x1 = g.center_x + inset;
        w.x0 = w.x1 - length;
        w.peak = 1.0 - peak;
      }
      g.wedges.push_back(w);
    }
    g.femur_cy = base - 1 - g.femur_radius;
  } else {
    Wedge w;
    const double half = draw(cfg.body_half_length, s, rng);
    w.thickness = draw(cfg.body_thickness, s, rng);
    w.peak = draw(cfg.wedge_peak, 1.0, rng);
    w.base_row = base;
    w.x0 = g.center_x - half;
    w.x1 = g.center_x + half;
    g.wedges.push_back(w);
    g.femur_cy = base - std::ceil(w.thickness) - 1 - g.femur_radius;
  }
  return g;
}

}  // namespace

std::string_view to_string(Contrast c) { return c == Contrast::Bright ? "bright" : "dark"; }

Contrast contrast_from_string(std::string_view s) {
  if (s == "bright") return Contrast::Bright;
  if (s == "dark") return Contrast::Dark;
  throw std::invalid_argument("unknown contrast '" + std::string(s) + "' (expected bright or dark)");
}

Levels levels_for(Contrast c) {
  Levels l;
  if (c == Contrast::Dark) {
    l.lateral = 0.15f;
    l.medial = 0.05f;
  }
  return l;
}

void PhantomConfig::validate() const {
  if (size < 16) throw std::invalid_argument("phantom size must be at least 16");
  if (num_classes != 4) throw std::invalid_argument("phantom renders exactly 4 classes");
  if (!(topology_mix >= 0.0 && topology_mix <= 1.0)) {
    throw std::invalid_argument("topology_mix must lie in [0, 1]");
  }
  if (!(medial_fraction >= 0.0 && medial_fraction <= 1.0)) {
    throw std::invalid_argument("medial_fraction must lie in [0, 1]");
  }
  if (!(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be non-negative");
  for (const Range* r : {&center_offset, &plateau_row, &cartilage_rows, &horn_length, &horn_thickness,
                         &horn_inset, &body_half_length, &body_thickness, &wedge_peak, &femur_radius,
                         &gain, &offset}) {
    if (r->hi < r->lo) throw std::invalid_argument("jitter range with hi < lo");
  }
  if (gain.lo <= 0.0) throw std::invalid_argument("contrast gain must be positive");
  if (wedge_peak.lo <= 0.0 || wedge_peak.hi >= 1.0) {
    throw std::invalid_argument("wedge_peak must lie strictly inside (0, 1)");
  }
}

double Wedge::height_at(int x) const {
  const double u = (x - x0) / (x1 - x0);
  if (u <= 0.0 || u >= 1.0) return 0.0;
  return thickness * (u <= peak ? u / peak : (1.0 - u) / (1.0 - peak));
}

ClassMask rasterize(const SliceGeometry& g, int size, int num_classes) {
  ClassMask m(size, size, num_classes);
  for (int y = g.plateau_row - g.cartilage_rows; y < g.plateau_row; ++y) {
    for (int x = 0; x < size; ++x) m.at(y, x) = kTibialCartilage;
  }
  for (const auto& w : g.wedges) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (in_wedge(w, x, y)) m.at(y, x) = static_cast<std::uint8_t>(g.meniscus_class);
      }
    }
  }
  return m;
}

Image2D compose_intensities(const SliceGeometry& g, int size, Contrast contrast) {
  const Levels l = levels_for(contrast);
  const ClassMask m = rasterize(g, size, 4);
  Image2D img(size, size, l.background);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      float& v = img.at(y, x);
      switch (m.at(y, x)) {
        case kLateralMeniscus: v = l.lateral; break;
        case kMedialMeniscus: v = l.medial; break;
        case kTibialCartilage: v = l.cartilage; break;
        default:
          if (y >= g.plateau_row || in_femur(g, x, y)) v = l.bone;
      }
      v = static_cast<float>(std::clamp(l.background + g.gain * (v - l.background) + g.offset, 0.0, 1.0));
    }
  }
  return img;
}

SliceRecord generate_slice(const PhantomConfig& cfg, std::string id, Rng& rng) {
  cfg.validate();
  const era::EraConfig era_defaults;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    SliceGeometry g = draw_geometry(cfg, rng);
    if (!fits(g, cfg.size)) continue;
    ClassMask mask = rasterize(g, cfg.size, cfg.num_classes);
    const auto topo = era::classify_topology(
        era::meniscus_mask(mask, {kLateralMeniscus, kMedialMeniscus}), era_defaults);
    if (topo.kind != g.kind) continue;

    Image2D image = compose_intensities(g, cfg.size, cfg.contrast);
    if (cfg.noise_std > 0.0) {
      std::normal_distribution<double> noise(0.0, cfg.noise_std);
      for (auto& v : image.data) {
        v = static_cast<float>(std::clamp(static_cast<double>(v) + noise(rng), 0.0, 1.0));
      }
    }
    return SliceRecord{std::move(id), std::move(image), std::move(mask), std::move(g), cfg.contrast, 0};
  }
  throw std::runtime_error("phantom slice " + id + " violated the border margin " +
                           std::to_string(kMaxAttempts) + " times; shrink the jitter ranges");
}

SliceRecord generate_slice(const PhantomConfig& cfg, const std::string& id, std::uint64_t master_seed) {
  const std::uint64_t seed = derive_seed(master_seed, {hash_tag("slice"), hash_tag(id)});
  Rng rng(seed);
  SliceRecord r = generate_slice(cfg, id, rng);
  r.seed = seed;
  return r;
}

int labeled_count(int count, double fraction) {
  if (count <= 0) return 0;
  const int n = static_cast<int>(std::ceil(count * fraction - 1e-9));
  return std::clamp(n, 1, count);
}

void assign_labeled(io::Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("labeled fraction must lie in (0, 1]");
  }
  std::vector<io::Sample*> train;
  for (auto& s : dataset.samples) {
    if (s.split == io::Split::Train) train.push_back(&s);
  }
  Rng rng(derive_seed(seed, {hash_tag("labeled-split")}));
  std::shuffle(train.begin(), train.end(), rng);
  const int n = labeled_count(static_cast<int>(train.size()), fraction);
  for (std::size_t i = 0; i < train.size(); ++i) {
    train[i]->labeled = static_cast<int>(i) < n && train[i]->has_label;
  }
}

io::Dataset make_dataset(const PhantomConfig& cfg, const DatasetOptions& opts) {
  if (opts.count < 2) throw std::invalid_argument("phantom dataset needs count >= 2");
  if (opts.test_count < 0) throw std::invalid_argument("test count must be non-negative");
  io::Dataset d;
  d.name = opts.name;
  d.seed = opts.seed;
  d.contrast = std::string(to_string(cfg.contrast));
  d.num_classes = cfg.num_classes;
  char buf[16];
  auto add = [&](const char* prefix, int i, io::Split split) {
    std::snprintf(buf, sizeof buf, "%s%04d", prefix, i);
    SliceRecord r = generate_slice(cfg, std::string(buf), opts.seed);
    d.samples.push_back(io::Sample{r.id, std::move(r.image), std::move(r.mask), true, false, split});
  };
  for (int i = 0; i < opts.count; ++i) add("s", i, io::Split::Train);
  for (int i = 0; i < opts.test_count; ++i) add("t", i, io::Split::Test);
  assign_labeled(d, opts.labeled_fraction, opts.seed);
  return d;
}

io::Manifest generate_dataset(const PhantomConfig& cfg, const DatasetOptions& opts,
                              const std::filesystem::path& out_dir) {
  return io::save_dataset(make_dataset(cfg, opts), out_dir);
}

}  // namespace eranet::phantom
