#include "eranet/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace eranet::pipeline {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Json range_json(const phantom::Range& r) { return Json::array({r.lo, r.hi}); }

phantom::Range range_from(const Json& j, const phantom::Range& fallback) {
  if (j.is_null()) return fallback;
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

Json phantom_json(const PhantomSource& p) {
  const auto& c = p.config;
  const auto& o = p.options;
  return {{"size", c.size},
          {"topology_mix", c.topology_mix},
          {"medial_fraction", c.medial_fraction},
          {"contrast", phantom::to_string(c.contrast)},
          {"noise_std", c.noise_std},
          {"gain", range_json(c.gain)},
          {"offset", range_json(c.offset)},
          {"count", o.count},
          {"test_count", o.test_count},
          {"labeled_fraction", o.labeled_fraction},
          {"seed", o.seed},
          {"name", o.name}};
}

PhantomSource phantom_from(const Json& j) {
  PhantomSource p;
  auto& c = p.config;
  auto& o = p.options;
  c.size = j.value("size", c.size);
  c.topology_mix = j.value("topology_mix", c.topology_mix);
  c.medial_fraction = j.value("medial_fraction", c.medial_fraction);
  c.contrast = phantom::contrast_from_string(j.value("contrast", std::string("bright")));
  c.noise_std = j.value("noise_std", c.noise_std);
  c.gain = range_from(j.value("gain", Json()), c.gain);
  c.offset = range_from(j.value("offset", Json()), c.offset);
  o.count = j.value("count", o.count);
  o.test_count = j.value("test_count", o.test_count);
  o.labeled_fraction = j.value("labeled_fraction", o.labeled_fraction);
  o.seed = j.value("seed", o.seed);
  o.name = j.value("name", o.name);
  return p;
}

Json metrics_json(const MetricReport& m) {
  return {{"per_class_dsc", m.per_class_dsc},
          {"per_class_assd", m.per_class_assd},
          {"mean_dsc", m.mean_dsc},
          {"mean_assd", m.mean_assd}};
}

Json curve_json(const std::vector<net::EpochLog>& curve) {
  Json a = Json::array();
  for (const auto& e : curve) {
    a.push_back({{"epoch", e.epoch},
                 {"steps", e.steps},
                 {"l_sup", e.mean.l_sup},
                 {"l_consis", e.mean.l_consis},
                 {"l_unsup", e.mean.l_unsup},
                 {"lambda_t", e.mean.lambda_t},
                 {"total", e.mean.total},
                 {"era_applied", e.era_applied},
                 {"era_skipped", e.era_skipped}});
  }
  return a;
}

bool parse_switch(const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw std::invalid_argument("expected on/off, got '" + v + "'");
}

double parse_number(const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw std::invalid_argument("not a number: '" + v + "'");
  return x;
}

double parse_ratio(const std::string& v) {
  const auto slash = v.find('/');
  if (slash == std::string::npos) return parse_number(v);
  const double num = parse_number(v.substr(0, slash));
  const double den = parse_number(v.substr(slash + 1));
  if (den == 0.0) throw std::invalid_argument("ratio with zero denominator");
  return num / den;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

StageReport stage_report(const std::string& name, const net::TrainResult& r, int pairs,
                         const MetricReport& metrics, double seconds) {
  StageReport s;
  s.name = name;
  s.train_pairs = pairs;
  s.curve = r.curve;
  s.metrics = metrics;
  s.era_applied = r.era_applied;
  s.era_skipped = r.era_skipped;
  s.checkpoint_epochs = r.checkpoint_epochs;
  s.seconds = seconds;
  return s;
}

template <typename Fn>
auto tagged(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

std::map<std::string, int> count_sources(const std::vector<net::TrainingPair>& pairs) {
  std::map<std::string, int> m;
  for (const auto& p : pairs) ++m[std::string(net::to_string(p.source))];
  return m;
}

}  // namespace

void RunConfig::validate() const {
  if (k < 1 || d < 1) throw std::invalid_argument("model widths k and d must be positive");
  train.validate();
  cst.validate();
  if (labeled_fraction && !(*labeled_fraction > 0.0 && *labeled_fraction <= 1.0)) {
    throw std::invalid_argument("labeled_fraction must lie in (0, 1]");
  }
  if (!(spacing > 0.0)) throw std::invalid_argument("spacing must be positive");
  if (manifest.empty() && !phantom) throw std::invalid_argument("config names neither a manifest nor a phantom");
  if (!manifest.empty() && !fs::exists(manifest)) {
    throw std::invalid_argument("manifest " + manifest + " does not exist");
  }
  if (phantom) phantom->config.validate();
}

Json RunConfig::to_json() const {
  Json j;
  j["manifest"] = manifest;
  j["phantom"] = phantom ? phantom_json(*phantom) : Json(nullptr);
  j["labeled_fraction"] = labeled_fraction ? Json(*labeled_fraction) : Json(nullptr);
  j["model"] = {{"k", k}, {"d", d}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"labeled_per_batch", train.labeled_per_batch},
                {"steps_per_epoch", train.steps_per_epoch},
                {"base_lr", train.base_lr},
                {"ema_alpha", train.ema_alpha},
                {"lambda_max", train.lambda_max},
                {"pca", train.use_pca},
                {"soft_unsup_targets", train.soft_unsup_targets},
                {"lambda_override", train.lambda_override ? Json(*train.lambda_override) : Json(nullptr)},
                {"meniscus_classes", train.meniscus_classes}};
  j["era"] = {{"u1", era_u1},
              {"u3", era_u3},
              {"edge_fraction", train.era.edge_fraction},
              {"box_margin", train.era.box_margin},
              {"min_component_px", train.era.min_component_px}};
  j["cst"] = {{"enabled", cst_enabled}, {"threshold", cst.threshold}, {"checkpoints", cst.checkpoints}};
  j["seed"] = seed;
  j["spacing"] = spacing;
  j["output_dir"] = output_dir;
  j["dump_pgm"] = dump_pgm;
  return j;
}

RunConfig RunConfig::from_json(const Json& j) {
  RunConfig c;
  c.manifest = j.value("manifest", std::string{});
  if (j.contains("phantom") && !j["phantom"].is_null()) c.phantom = phantom_from(j["phantom"]);
  if (j.contains("labeled_fraction") && !j["labeled_fraction"].is_null()) {
    c.labeled_fraction = j["labeled_fraction"].get<double>();
  }
  if (j.contains("model")) {
    c.k = j["model"].value("k", c.k);
    c.d = j["model"].value("d", c.d);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.labeled_per_batch = t.value("labeled_per_batch", c.train.labeled_per_batch);
    c.train.steps_per_epoch = t.value("steps_per_epoch", c.train.steps_per_epoch);
    c.train.base_lr = t.value("base_lr", c.train.base_lr);
    c.train.ema_alpha = t.value("ema_alpha", c.train.ema_alpha);
    c.train.lambda_max = t.value("lambda_max", c.train.lambda_max);
    c.train.use_pca = t.value("pca", c.train.use_pca);
    c.train.soft_unsup_targets = t.value("soft_unsup_targets", c.train.soft_unsup_targets);
    if (t.contains("lambda_override") && !t["lambda_override"].is_null()) {
      c.train.lambda_override = t["lambda_override"].get<double>();
    }
    if (t.contains("meniscus_classes")) c.train.meniscus_classes = t["meniscus_classes"].get<std::set<int>>();
  }
  if (j.contains("era")) {
    const auto& e = j["era"];
    c.era_u1 = e.value("u1", c.era_u1);
    c.era_u3 = e.value("u3", c.era_u3);
    c.train.era.edge_fraction = e.value("edge_fraction", c.train.era.edge_fraction);
    c.train.era.box_margin = e.value("box_margin", c.train.era.box_margin);
    c.train.era.min_component_px = e.value("min_component_px", c.train.era.min_component_px);
  }
  if (j.contains("cst")) {
    c.cst_enabled = j["cst"].value("enabled", c.cst_enabled);
    c.cst.threshold = j["cst"].value("threshold", c.cst.threshold);
    c.cst.checkpoints = j["cst"].value("checkpoints", c.cst.checkpoints);
  }
  c.seed = j.value("seed", c.seed);
  c.spacing = j.value("spacing", c.spacing);
  c.output_dir = j.value("output_dir", std::string{});
  c.dump_pgm = j.value("dump_pgm", false);
  return c;
}

std::string RunConfig::hash() const {
  Json j = to_json();
  j.erase("output_dir");
  j.erase("dump_pgm");
  return io::hash_json(j);
}

RunConfig paper_settings() {
  RunConfig c;
  c.train.epochs = 200;
  c.train.batch_size = 8;
  c.train.base_lr = 0.01;
  c.cst.threshold = 0.8;
  c.cst.checkpoints = 5;
  return c;
}

const StageReport* RunReport::stage(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return &s;
  return nullptr;
}

Json RunReport::to_json(bool include_timing) const {
  Json j;
  j["config_hash"] = config_hash;
  j["config"] = config;
  j["seed"] = seed;
  j["dataset"] = {{"labeled", labeled}, {"unlabeled", unlabeled}, {"test", test}};
  j["stages"] = Json::array();
  for (const auto& s : stages) {
    j["stages"].push_back({{"name", s.name},
                           {"train_pairs", s.train_pairs},
                           {"era", {{"applied", s.era_applied}, {"skipped", s.era_skipped}}},
                           {"checkpoint_epochs", s.checkpoint_epochs},
                           {"metrics", metrics_json(s.metrics)},
                           {"curve", curve_json(s.curve)}});
  }
  Json records = Json::array();
  for (const auto& r : reliability) {
    records.push_back({{"id", r.id}, {"score", r.score}, {"assignment", cst::to_string(r.assignment)}});
  }
  j["reliability"] = {{"threshold", threshold}, {"histogram", reliability_histogram}, {"records", records}};
  j["provenance"] = {{"valid", provenance_valid}, {"stages", provenance}};
  j["warnings"] = warnings;
  if (include_timing) {
    Json t;
    t["total_seconds"] = total_seconds;
    for (const auto& s : stages) t["stages"][s.name] = s.seconds;
    j["timing"] = t;
  }
  return j;
}

io::Dataset resolve_dataset(const RunConfig& cfg) {
  if (!cfg.manifest.empty()) return io::load_dataset(cfg.manifest);
  if (!cfg.phantom) throw std::invalid_argument("config names neither a manifest nor a phantom");
  return phantom::make_dataset(cfg.phantom->config, cfg.phantom->options);
}

io::Dataset prepare_dataset(const RunConfig& cfg, const io::Dataset& data) {
  io::Dataset out = data;
  if (cfg.labeled_fraction) phantom::assign_labeled(out, *cfg.labeled_fraction, data.seed);
  return out;
}

MetricReport evaluate_model(const net::ModelParams& params, const io::Dataset& data, double spacing) {
  std::vector<ClassMask> preds, gts;
  for (const auto* s : data.test()) {
    preds.push_back(net::predict(params, s->image));
    gts.push_back(s->label);
  }
  if (gts.empty()) throw std::invalid_argument("dataset has no labeled test slices");
  return evaluate_volume(preds, gts, spacing);
}

std::vector<net::TrainingPair> labeled_pairs(const io::Dataset& data) {
  std::vector<net::TrainingPair> out;
  for (const auto* s : data.labeled()) out.push_back({s->id, s->image, s->label, net::LabelSource::GroundTruth});
  return out;
}

std::vector<net::UnlabeledImage> unlabeled_images(const io::Dataset& data) {
  std::vector<net::UnlabeledImage> out;
  for (const auto* s : data.unlabeled()) out.push_back({s->id, s->image});
  return out;
}

net::ModelParams initial_params(const RunConfig& cfg, int num_classes) {
  Rng rng = make_rng(cfg.seed, {hash_tag("init")});
  return net::init_params(cfg.k, cfg.d, num_classes, rng);
}

net::TrainConfig resolved_train(const RunConfig& cfg, const io::Dataset& data) {
  net::TrainConfig t = cfg.train;
  if (t.steps_per_epoch == 0) {
    std::size_t pool = 0;
    for (const auto& s : data.samples) pool += s.split == io::Split::Train;
    t.steps_per_epoch = static_cast<int>(std::max<std::size_t>(1, (pool + t.batch_size - 1) / t.batch_size));
  }
  return t;
}

PipelineResult run_pipeline(const RunConfig& cfg_in, const io::Dataset& raw) {
  const auto t_start = Clock::now();
  RunConfig cfg = cfg_in;
  cfg.validate();
  const io::Dataset data = prepare_dataset(cfg, raw);
  const auto labeled = labeled_pairs(data);
  const auto unlabeled = unlabeled_images(data);
  if (labeled.empty()) throw StageError("setup", "dataset has no labeled training slices");

  const net::TrainConfig train = resolved_train(cfg, data);

  PipelineResult out;
  RunReport& rep = out.report;
  rep.config_hash = cfg.hash();
  rep.config = cfg.to_json();
  rep.config.erase("output_dir");
  rep.config.erase("dump_pgm");
  rep.seed = cfg.seed;
  rep.labeled = static_cast<int>(labeled.size());
  rep.unlabeled = static_cast<int>(unlabeled.size());
  rep.test = static_cast<int>(data.test().size());
  rep.threshold = cfg.cst.threshold;

  const net::ModelParams init = initial_params(cfg, data.num_classes);

  {
    const auto t0 = Clock::now();
    auto r = tagged("baseline", [&] { return net::train_supervised(labeled, init, train, false, cfg.seed, "baseline"); });
    auto m = tagged("baseline", [&] { return evaluate_model(r.student, data, cfg.spacing); });
    rep.stages.push_back(stage_report("baseline", r, rep.labeled, m, seconds_since(t0)));
    out.models["baseline"] = r.student;
  }

  // Without unlabeled images or ERA, U1 would repeat the baseline exactly.
  const bool run_u1 = !unlabeled.empty() || cfg.era_u1;
  if (run_u1) {
    const auto t0 = Clock::now();
    net::TrainConfig t1 = train;
    t1.use_era = cfg.era_u1;
    auto r = tagged("u1", [&] {
      return net::train_mean_teacher(labeled, unlabeled, init, t1, cfg.seed, cfg.cst.checkpoints, "u1");
    });
    auto m = tagged("u1", [&] { return evaluate_model(r.student, data, cfg.spacing); });
    rep.stages.push_back(stage_report("u1", r, rep.labeled + rep.unlabeled, m, seconds_since(t0)));
    out.models["u1"] = r.student;
    out.models["u2"] = r.teacher;
    out.u1_checkpoints = r.checkpoints;
    out.u1_checkpoint_epochs = r.checkpoint_epochs;
  } else {
    out.u1_checkpoints = {out.models["baseline"]};
  }

  if (cfg.cst_enabled) {
    const auto t0 = Clock::now();
    auto res = tagged("cst", [&] {
      return cst::run_cst(out.u1_checkpoints, labeled, unlabeled, cfg.cst, train, init, cfg.era_u3, cfg.seed);
    });
    for (const auto& r : res.records) rep.reliability.push_back({r.id, r.score, r.assignment});
    rep.reliability_histogram = cst::reliability_histogram(res.records);
    rep.provenance["u3"] = count_sources(res.u3_pairs);
    rep.provenance["u4"] = count_sources(res.u4_pairs);
    rep.warnings.insert(rep.warnings.end(), res.warnings.begin(), res.warnings.end());
    const double cst_seconds = seconds_since(t0);
    auto m3 = tagged("u3", [&] { return evaluate_model(res.u3.student, data, cfg.spacing); });
    auto m4 = tagged("u4", [&] { return evaluate_model(res.u4.student, data, cfg.spacing); });
    rep.stages.push_back(stage_report("u3", res.u3, static_cast<int>(res.u3_pairs.size()), m3, cst_seconds / 2));
    rep.stages.push_back(stage_report("u4", res.u4, static_cast<int>(res.u4_pairs.size()), m4, cst_seconds / 2));
    out.models["u3"] = res.u3.student;
    out.models["u4"] = res.u4.student;
  }
  rep.total_seconds = seconds_since(t_start);
  return out;
}

PipelineResult run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  const io::Dataset data = tagged("setup", [&] { return resolve_dataset(cfg); });
  PipelineResult r = run_pipeline(cfg, data);
  if (!cfg.output_dir.empty()) write_outputs(cfg, r, prepare_dataset(cfg, data));
  return r;
}

void write_outputs(const RunConfig& cfg, const PipelineResult& result, const io::Dataset& data) {
  const fs::path root = cfg.output_dir;
  io::write_text_atomic(root / "report.json", result.report.to_json().dump(2) + "\n");
  for (const auto& [name, params] : result.models) {
    io::save_checkpoint(root / "models" / name, params, {name, cfg.train.epochs, cfg.seed, result.report.config_hash});
  }
  for (std::size_t j = 0; j < result.u1_checkpoints.size() && j < result.u1_checkpoint_epochs.size(); ++j) {
    const int epoch = result.u1_checkpoint_epochs[j];
    io::save_checkpoint(root / "checkpoints" / ("u1_ck" + std::to_string(j + 1)), result.u1_checkpoints[j],
                        {"u1", epoch, cfg.seed, result.report.config_hash});
  }
  if (cfg.dump_pgm) {
    for (const auto& [name, params] : result.models) {
      for (const auto* s : data.test()) {
        const ClassMask pred = net::predict(params, s->image);
        io::write_pgm(root / "predictions" / name / (s->id + ".pgm"), io::to_tensor(pred));
        io::write_tensor(root / "predictions" / name / (s->id + ".erat"), io::to_tensor(pred));
      }
    }
  }
}

AblationAxis parse_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
    throw std::invalid_argument("axis must look like name=v1,v2 (got '" + spec + "')");
  }
  AblationAxis a;
  a.name = spec.substr(0, eq);
  std::stringstream ss(spec.substr(eq + 1));
  std::string v;
  while (std::getline(ss, v, ',')) {
    if (v.empty()) throw std::invalid_argument("empty value in axis '" + spec + "'");
    a.values.push_back(v);
  }
  return a;
}

RunConfig with_setting(RunConfig cfg, const std::string& name, const std::string& value) {
  if (name == "era") {
    cfg.era_u1 = cfg.era_u3 = parse_switch(value);
  } else if (name == "pca") {
    cfg.train.use_pca = parse_switch(value);
  } else if (name == "cst") {
    cfg.cst_enabled = parse_switch(value);
  } else if (name == "ratio") {
    cfg.labeled_fraction = parse_ratio(value);
  } else if (name == "threshold") {
    cfg.cst.threshold = parse_number(value);
  } else if (name == "seed") {
    cfg.seed = std::stoull(value);
  } else if (name == "epochs") {
    cfg.train.epochs = std::stoi(value);
  } else {
    throw std::invalid_argument("unknown ablation axis '" + name + "'");
  }
  return cfg;
}

std::string AblationResult::csv() const {
  std::ostringstream os;
  os << "run";
  for (const auto& a : axes) os << ',' << a;
  os << ",config_hash,seed,stage,train_pairs";
  int classes = 0;
  for (const auto& r : runs) {
    if (r.report && !r.report->stages.empty()) {
      classes = static_cast<int>(r.report->stages.front().metrics.per_class_dsc.size());
      break;
    }
  }
  for (int c = 1; c < classes; ++c) os << ",dsc_" << c;
  os << ",mean_dsc";
  for (int c = 1; c < classes; ++c) os << ",assd_" << c;
  os << ",mean_assd,status\n";

  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    auto prefix = [&] {
      os << i;
      for (const auto& s : r.settings) os << ',' << csv_field(s.second);
      os << ',' << r.config.hash() << ',' << r.config.seed;
    };
    if (!r.report) {
      prefix();
      os << ",-,0";
      for (int c = 0; c < 2 * std::max(classes - 1, 0) + 2; ++c) os << ',';
      os << ',' << csv_field("error: " + r.error) << '\n';
      continue;
    }
    for (const auto& s : r.report->stages) {
      prefix();
      os << ',' << s.name << ',' << s.train_pairs;
      for (int c = 1; c < classes; ++c) os << ',' << fmt(s.metrics.per_class_dsc[c]);
      os << ',' << fmt(s.metrics.mean_dsc);
      for (int c = 1; c < classes; ++c) os << ',' << fmt(s.metrics.per_class_assd[c]);
      os << ',' << fmt(s.metrics.mean_assd) << ",ok\n";
    }
  }
  return os.str();
}

Json AblationResult::to_json(bool include_timing) const {
  Json j;
  j["axes"] = axes;
  j["runs"] = Json::array();
  for (const auto& r : runs) {
    Json settings = Json::object();
    for (const auto& [k, v] : r.settings) settings[k] = v;
    Json e{{"settings", settings}, {"config_hash", r.config.hash()}};
    if (r.report) {
      e["report"] = r.report->to_json(include_timing);
    } else {
      e["error"] = r.error;
    }
    j["runs"].push_back(e);
  }
  return j;
}

AblationResult run_ablation(const RunConfig& base, const io::Dataset& data,
                            const std::vector<AblationAxis>& axes, int jobs) {
  AblationResult result;
  std::size_t total = 1;
  for (const auto& a : axes) {
    if (a.values.empty()) throw std::invalid_argument("ablation axis " + a.name + " has no values");
    result.axes.push_back(a.name);
    total *= a.values.size();
  }
  for (std::size_t i = 0; i < total; ++i) {
    AblationRun run;
    run.config = base;
    std::size_t rem = i;
    std::vector<std::size_t> pick(axes.size());
    for (std::size_t a = axes.size(); a-- > 0;) {
      pick[a] = rem % axes[a].values.size();
      rem /= axes[a].values.size();
    }
    for (std::size_t a = 0; a < axes.size(); ++a) run.settings.emplace_back(axes[a].name, axes[a].values[pick[a]]);
    try {
      for (const auto& [name, v] : run.settings) run.config = with_setting(run.config, name, v);
      run.config.validate();
    } catch (const std::exception& e) {
      run.error = e.what();
    }
    result.runs.push_back(std::move(run));
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < result.runs.size(); i = next++) {
      auto& run = result.runs[i];
      if (!run.error.empty()) continue;
      try {
        run.report = run_pipeline(run.config, data).report;
      } catch (const std::exception& e) {
        run.error = e.what();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(result.runs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return result;
}

}  // namespace eranet::pipeline
