#include "eranet/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "eranet/cst.hpp"
#include "eranet/era.hpp"
#include "eranet/io.hpp"
#include "eranet/net.hpp"
#include "eranet/phantom.hpp"
#include "eranet/pipeline.hpp"
#include "eranet/proto.hpp"
#include "eranet/trainer.hpp"

namespace eranet::cli {

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct PhantomArgs {
  int count = 60;
  int test_count = 20;
  double labeled_fraction = 0.1;
  std::uint64_t seed = 1;
  std::string contrast = "bright";
  std::string out;
  int size = 64;
  double noise_std = 0.05;
  double topology_mix = 0.5;
  std::string name = "phantom";
};

struct AugmentArgs {
  std::string image, mask, out;
  std::uint64_t seed = 1;
  std::vector<int> classes{phantom::kLateralMeniscus, phantom::kMedialMeniscus};
};

struct RunArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string stage;
  std::vector<std::string> axes;
  int jobs = 1;
  bool pgm = false;
};

struct ReliabilityArgs {
  std::string checkpoints_dir, unlabeled_dir, out;
  double threshold = 0.8;
};

struct EvalArgs {
  std::string pred_dir, gt_dir, report;
  double spacing = 1.0;
  int classes = 0;
};

Json metrics_json(const MetricReport& m) {
  return {{"per_class_dsc", m.per_class_dsc},
          {"per_class_assd", m.per_class_assd},
          {"mean_dsc", m.mean_dsc},
          {"mean_assd", m.mean_assd}};
}

void emit(const Json& j, const std::string& path, std::ostream& out) {
  const std::string text = j.dump(2) + "\n";
  if (path.empty()) {
    out << text;
  } else {
    io::write_text_atomic(path, text);
  }
}

pipeline::RunConfig load_config(const RunArgs& a) {
  pipeline::RunConfig cfg = pipeline::RunConfig::from_json(Json::parse(io::read_text(a.config)));
  // Relative manifest paths resolve against the config file.
  if (!cfg.manifest.empty() && fs::path(cfg.manifest).is_relative()) {
    cfg.manifest = (fs::path(a.config).parent_path() / cfg.manifest).string();
  }
  if (a.seed) cfg.seed = *a.seed;
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (a.pgm) cfg.dump_pgm = true;
  cfg.validate();
  return cfg;
}

/// Checkpoint directories below `dir` (or `dir` itself), oldest epoch first.
std::vector<io::LoadedCheckpoint> load_checkpoints(const fs::path& dir) {
  std::vector<fs::path> dirs;
  if (fs::exists(dir / "checkpoint.json")) {
    dirs.push_back(dir);
  } else {
    if (!fs::is_directory(dir)) throw std::runtime_error("checkpoint directory " + dir.string() + " not found");
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_directory() && fs::exists(e.path() / "checkpoint.json")) dirs.push_back(e.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<io::LoadedCheckpoint> out;
  for (const auto& d : dirs) out.push_back(io::load_checkpoint(d));
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.meta.epoch < b.meta.epoch; });
  if (out.empty()) throw std::runtime_error("no checkpoints under " + dir.string());
  return out;
}

std::vector<net::UnlabeledImage> load_unlabeled(const fs::path& dir) {
  std::vector<net::UnlabeledImage> out;
  if (fs::exists(dir / "manifest.json")) {
    const io::Dataset d = io::load_dataset(dir / "manifest.json");
    return pipeline::unlabeled_images(d);
  }
  if (!fs::is_directory(dir)) throw std::runtime_error("unlabeled directory " + dir.string() + " not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".erat") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out.push_back({f.stem().string(), io::to_image(io::read_tensor(f))});
  return out;
}

Json reliability_json(const std::vector<cst::ReliabilityRecord>& records, double threshold) {
  Json rows = Json::array();
  for (const auto& r : records) {
    rows.push_back({{"id", r.id}, {"score", r.score}, {"assignment", cst::to_string(r.assignment)}});
  }
  return {{"threshold", threshold},
          {"histogram", cst::reliability_histogram(records)},
          {"records", rows}};
}

int cmd_phantom(const PhantomArgs& a, std::ostream& out) {
  phantom::PhantomConfig cfg;
  cfg.size = a.size;
  cfg.contrast = phantom::contrast_from_string(a.contrast);
  cfg.noise_std = a.noise_std;
  cfg.topology_mix = a.topology_mix;
  phantom::DatasetOptions opts;
  opts.count = a.count;
  opts.test_count = a.test_count;
  opts.labeled_fraction = a.labeled_fraction;
  opts.seed = a.seed;
  opts.name = a.name;
  const io::Manifest m = phantom::generate_dataset(cfg, opts, a.out);
  int labeled = 0;
  for (const auto& e : m.entries) labeled += e.labeled;
  out << "wrote " << m.entries.size() << " slices (" << labeled << " labeled) to " << a.out << "\n";
  return kExitOk;
}

int cmd_augment(const AugmentArgs& a, std::ostream& out) {
  const Image2D image = io::to_image(io::read_tensor(a.image));
  const ClassMask mask = io::to_mask(io::read_tensor(a.mask));
  Rng rng = make_rng(a.seed, {hash_tag("augment")});
  const std::set<int> classes(a.classes.begin(), a.classes.end());
  const era::EraResult r = era::apply_era(image, mask, classes, era::EraConfig{}, rng);
  const fs::path dir = a.out;
  io::write_tensor(dir / "image.erat", io::to_tensor(r.image));
  io::write_tensor(dir / "mask.erat", io::to_tensor(r.mask));
  Json plan;
  plan["seed"] = a.seed;
  plan["applied"] = r.applied();
  if (r.skipped) plan["skipped"] = era::to_string(*r.skipped);
  if (r.plan) {
    const auto& p = *r.plan;
    auto px = [](const era::Pixel& q) { return Json::array({q.x, q.y}); };
    auto box = [](const era::Box& b) { return Json{{"x0", b.x0}, {"y0", b.y0}, {"x1", b.x1}, {"y1", b.y1}}; };
    plan["topology"] = era::to_string(p.topology.kind);
    plan["extremes"] = {{"fl", px(p.extremes.fl)}, {"ul", px(p.extremes.ul)}, {"bl", px(p.extremes.bl)},
                        {"fr", px(p.extremes.fr)}, {"ur", px(p.extremes.ur)}, {"br", px(p.extremes.br)}};
    plan["d"] = p.d;
    plan["d_left"] = p.d_left;
    plan["d_right"] = p.d_right;
    plan["x_rl"] = p.x_rl;
    plan["x_rr"] = p.x_rr;
    plan["box_left"] = box(p.box_left);
    plan["box_right"] = box(p.box_right);
    plan["range_left"] = {p.range_left.lo, p.range_left.hi};
    plan["range_right"] = {p.range_right.lo, p.range_right.hi};
  }
  io::write_text_atomic(dir / "era_plan.json", plan.dump(2) + "\n");
  out << (r.applied() ? "applied" : "skipped") << " ERA; wrote " << dir.string() << "\n";
  return kExitOk;
}

void print_summary(const pipeline::RunReport& rep, std::ostream& out) {
  out << "stage      pairs  mean_dsc  mean_assd\n";
  for (const auto& s : rep.stages) {
    out << std::left << std::setw(10) << s.name << std::right << std::setw(6) << s.train_pairs << std::fixed
        << std::setprecision(4) << std::setw(10) << s.metrics.mean_dsc << std::setw(11) << s.metrics.mean_assd
        << "\n";
  }
  for (const auto& w : rep.warnings) out << "warning: " << w << "\n";
}

int cmd_pipeline(const RunArgs& a, std::ostream& out) {
  const pipeline::RunConfig cfg = load_config(a);
  const pipeline::PipelineResult r = pipeline::run_pipeline(cfg);
  print_summary(r.report, out);
  if (cfg.output_dir.empty()) out << r.report.to_json().dump(2) << "\n";
  return kExitOk;
}

int cmd_train(const RunArgs& a, std::ostream& out) {
  const pipeline::RunConfig cfg = load_config(a);
  if (cfg.output_dir.empty()) throw std::invalid_argument("train needs --out or output_dir in the config");
  const io::Dataset data = pipeline::prepare_dataset(cfg, pipeline::resolve_dataset(cfg));
  const auto labeled = pipeline::labeled_pairs(data);
  const auto unlabeled = pipeline::unlabeled_images(data);
  const net::TrainConfig train = pipeline::resolved_train(cfg, data);
  const net::ModelParams init = pipeline::initial_params(cfg, data.num_classes);
  const fs::path root = cfg.output_dir;
  const std::string hash = cfg.hash();

  auto finish = [&](const std::string& stage, const net::ModelParams& params) {
    io::save_checkpoint(root / "models" / stage, params, {stage, train.epochs, cfg.seed, hash});
    const MetricReport m = pipeline::evaluate_model(params, data, cfg.spacing);
    out << stage << " mean_dsc " << m.mean_dsc << " mean_assd " << m.mean_assd << "\n";
  };

  if (a.stage == "baseline") {
    finish("baseline", net::train_supervised(labeled, init, train, false, cfg.seed, "baseline").student);
    return kExitOk;
  }
  if (a.stage == "u1") {
    net::TrainConfig t1 = train;
    t1.use_era = cfg.era_u1;
    const auto r = net::train_mean_teacher(labeled, unlabeled, init, t1, cfg.seed, cfg.cst.checkpoints, "u1");
    for (std::size_t j = 0; j < r.checkpoints.size(); ++j) {
      io::save_checkpoint(root / "checkpoints" / ("u1_ck" + std::to_string(j + 1)), r.checkpoints[j],
                          {"u1", r.checkpoint_epochs[j], cfg.seed, hash});
    }
    io::save_checkpoint(root / "models" / "u2", r.teacher, {"u2", train.epochs, cfg.seed, hash});
    finish("u1", r.student);
    return kExitOk;
  }

  // u3 and u4 rebuild the reliability split from the saved U1 checkpoints.
  std::vector<net::ModelParams> cks;
  for (auto& c : load_checkpoints(root / "checkpoints")) cks.push_back(std::move(c.params));
  const auto records = cst::score_unlabeled(cks, unlabeled, cfg.cst.threshold);
  io::write_text_atomic(root / "reliability.json", reliability_json(records, cfg.cst.threshold).dump(2) + "\n");
  const auto u3_pairs = cst::build_u3_pairs(labeled, unlabeled, records);
  std::vector<std::string> ids;
  for (const auto& p : labeled) ids.push_back(p.id);
  const cst::Partition part = cst::partition(records, cfg.cst.threshold);
  if (a.stage == "u3") {
    if (auto e = cst::validate_provenance(cst::CstStage::U3, u3_pairs, ids, part)) throw std::logic_error(*e);
    finish("u3", net::train_supervised(u3_pairs, init, train, cfg.era_u3, cfg.seed, "u3").student);
    return kExitOk;
  }
  const net::ModelParams u3 = io::load_checkpoint(root / "models" / "u3").params;
  const auto u4_pairs = cst::build_u4_pairs(u3_pairs, unlabeled, records, u3);
  if (auto e = cst::validate_provenance(cst::CstStage::U4, u4_pairs, ids, part)) throw std::logic_error(*e);
  finish("u4", net::train_supervised(u4_pairs, init, train, false, cfg.seed, "u4").student);
  return kExitOk;
}

int cmd_ablate(const RunArgs& a, std::ostream& out) {
  const pipeline::RunConfig cfg = load_config(a);
  std::vector<pipeline::AblationAxis> axes;
  for (const auto& s : a.axes) axes.push_back(pipeline::parse_axis(s));
  const io::Dataset data = pipeline::resolve_dataset(cfg);
  const auto result = pipeline::run_ablation(cfg, data, axes, a.jobs);
  if (cfg.output_dir.empty()) {
    out << result.csv();
  } else {
    const fs::path dir = cfg.output_dir;
    io::write_text_atomic(dir / "ablation.csv", result.csv());
    io::write_text_atomic(dir / "ablation.json", result.to_json().dump(2) + "\n");
    out << "wrote " << result.runs.size() << " runs to " << dir.string() << "\n";
  }
  for (const auto& r : result.runs) {
    if (!r.error.empty()) return kExitRuntime;
  }
  return kExitOk;
}

int cmd_reliability(const ReliabilityArgs& a, std::ostream& out) {
  std::vector<net::ModelParams> cks;
  for (auto& c : load_checkpoints(a.checkpoints_dir)) cks.push_back(std::move(c.params));
  const auto unlabeled = load_unlabeled(a.unlabeled_dir);
  const auto records = cst::score_unlabeled(cks, unlabeled, a.threshold);
  emit(reliability_json(records, a.threshold), a.out, out);
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.gt_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".erat") files.push_back(e.path().filename());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .erat ground-truth files in " + a.gt_dir);

  std::vector<ClassMask> preds, gts;
  int classes = a.classes;
  for (const auto& f : files) {
    const fs::path pred_path = fs::path(a.pred_dir) / f;
    if (!fs::exists(pred_path)) throw std::runtime_error("missing prediction " + pred_path.string());
    gts.push_back(io::to_mask(io::read_tensor(fs::path(a.gt_dir) / f)));
    preds.push_back(io::to_mask(io::read_tensor(pred_path)));
    classes = std::max({classes, gts.back().num_classes, preds.back().num_classes});
  }
  for (auto* v : {&preds, &gts}) {
    for (auto& m : *v) m.num_classes = classes;
  }
  Json slices = Json::array();
  for (std::size_t i = 0; i < files.size(); ++i) {
    Json s = metrics_json(evaluate(preds[i], gts[i], a.spacing));
    s["id"] = files[i].stem().string();
    slices.push_back(s);
  }
  Json rep{{"spacing", a.spacing},
           {"classes", classes},
           {"pooled", metrics_json(evaluate_volume(preds, gts, a.spacing))},
           {"slices", slices}};
  emit(rep, a.report, out);
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, std::ostream& out, std::ostream& err) {
  const net::GradCheckReport r = net::grad_check(seed);
  out << std::scientific << std::setprecision(3) << "l_sup " << r.l_sup << "\nl_unsup " << r.l_unsup
      << "\nl_consis " << r.l_consis << "\ncomposed " << r.composed << "\nmax_single " << r.max_single() << "\n";
  if (r.max_single() < 1e-4 && r.composed < 1e-3) return kExitOk;
  err << "gradient check failed\n";
  return kExitRuntime;
}

int cmd_export_pgm(const std::string& tensor, const std::string& out_path, std::ostream& out) {
  io::write_pgm(out_path, io::read_tensor(tensor));
  out << "wrote " << out_path << "\n";
  return kExitOk;
}

int cmd_proto_debug(const std::string& checkpoint, const std::string& image_path, const std::string& out_dir,
                    std::ostream& out) {
  const net::ModelParams params = io::load_checkpoint(checkpoint).params;
  const Image2D image = io::to_image(io::read_tensor(image_path));
  const auto pass = net::forward(params, image);
  const auto bundle = proto::compute_bundle(pass.features, pass.probs);
  const fs::path dir = out_dir;
  io::write_tensor(dir / "similarity.erat", io::to_tensor(bundle.similarity));
  io::write_tensor(dir / "prototypical.erat", io::to_tensor(bundle.prediction));
  io::write_tensor(dir / "probs.erat", io::to_tensor(pass.probs));
  out << "wrote S, SS and sigma to " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Meniscus segmentation toolkit: phantoms, ERA, mean teacher, conditional self-training"};
  app.require_subcommand(1);

  PhantomArgs ph;
  auto* phantom_cmd = app.add_subcommand("phantom", "generate a synthetic dataset");
  phantom_cmd->add_option("--count", ph.count, "training slices")->capture_default_str();
  phantom_cmd->add_option("--test-count", ph.test_count, "test slices")->capture_default_str();
  phantom_cmd->add_option("--labeled-fraction", ph.labeled_fraction)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  phantom_cmd->add_option("--seed", ph.seed)->capture_default_str();
  phantom_cmd->add_option("--contrast", ph.contrast)->capture_default_str()->check(CLI::IsMember({"bright", "dark"}));
  phantom_cmd->add_option("--out", ph.out, "output directory")->required();
  phantom_cmd->add_option("--size", ph.size)->capture_default_str();
  phantom_cmd->add_option("--noise-std", ph.noise_std)->capture_default_str();
  phantom_cmd->add_option("--topology-mix", ph.topology_mix, "probability of a two-piece slice")->capture_default_str();
  phantom_cmd->add_option("--name", ph.name)->capture_default_str();

  AugmentArgs au;
  auto* augment_cmd = app.add_subcommand("augment", "apply ERA to an image/mask tensor pair");
  augment_cmd->add_option("--image", au.image)->required();
  augment_cmd->add_option("--mask", au.mask)->required();
  augment_cmd->add_option("--seed", au.seed)->capture_default_str();
  augment_cmd->add_option("--out", au.out, "output directory")->required();
  augment_cmd->add_option("--classes", au.classes, "meniscus class ids")->delimiter(',')->capture_default_str();

  RunArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train one stage into --out");
  train_cmd->add_option("--config", tr.config)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--stage", tr.stage)->required()->check(CLI::IsMember({"baseline", "u1", "u3", "u4"}));
  train_cmd->add_option("--out", tr.out);
  train_cmd->add_option("--seed", tr.seed);

  ReliabilityArgs re;
  auto* rel_cmd = app.add_subcommand("reliability", "score unlabeled images against U1 checkpoints");
  rel_cmd->add_option("--checkpoints-dir", re.checkpoints_dir)->required();
  rel_cmd->add_option("--unlabeled-dir", re.unlabeled_dir)->required();
  rel_cmd->add_option("--threshold", re.threshold)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  rel_cmd->add_option("--out", re.out, "JSON output file (default stdout)");

  RunArgs pl;
  auto* pipe_cmd = app.add_subcommand("pipeline", "run baseline, U1, U3 and U4 end to end");
  pipe_cmd->add_option("--config", pl.config)->required()->check(CLI::ExistingFile);
  pipe_cmd->add_option("--out", pl.out);
  pipe_cmd->add_option("--seed", pl.seed);
  pipe_cmd->add_flag("--pgm", pl.pgm, "dump test predictions as PGM");

  RunArgs ab;
  auto* ablate_cmd = app.add_subcommand("ablate", "run a Cartesian grid of pipeline settings");
  ablate_cmd->add_option("--config", ab.config)->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--axis", ab.axes, "name=v1,v2,...")->required();
  ablate_cmd->add_option("--out", ab.out);
  ablate_cmd->add_option("--seed", ab.seed);
  ablate_cmd->add_option("--jobs", ab.jobs)->capture_default_str()->check(CLI::PositiveNumber);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "score prediction tensors against ground truth");
  eval_cmd->add_option("--pred-dir", ev.pred_dir)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--gt-dir", ev.gt_dir)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--spacing", ev.spacing)->capture_default_str()->check(CLI::PositiveNumber);
  eval_cmd->add_option("--classes", ev.classes, "class count (default: inferred)");
  eval_cmd->add_option("--report", ev.report, "JSON output file (default stdout)");

  std::uint64_t gc_seed = 1;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every loss term");
  gc_cmd->add_option("--seed", gc_seed)->capture_default_str();

  std::string pgm_tensor, pgm_out;
  auto* pgm_cmd = app.add_subcommand("export-pgm", "write a tensor file as an 8-bit PGM");
  pgm_cmd->add_option("--tensor", pgm_tensor)->required()->check(CLI::ExistingFile);
  pgm_cmd->add_option("--out", pgm_out)->required();

  std::string pd_ck, pd_image, pd_out;
  auto* pd_cmd = app.add_subcommand("proto-debug", "dump prototype similarity maps for one image");
  pd_cmd->add_option("--checkpoint", pd_ck)->required()->check(CLI::ExistingDirectory);
  pd_cmd->add_option("--image", pd_image)->required()->check(CLI::ExistingFile);
  pd_cmd->add_option("--out", pd_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (phantom_cmd->parsed()) return cmd_phantom(ph, out);
    if (augment_cmd->parsed()) return cmd_augment(au, out);
    if (train_cmd->parsed()) return cmd_train(tr, out);
    if (rel_cmd->parsed()) return cmd_reliability(re, out);
    if (pipe_cmd->parsed()) return cmd_pipeline(pl, out);
    if (ablate_cmd->parsed()) return cmd_ablate(ab, out);
    if (eval_cmd->parsed()) return cmd_eval(ev, out);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc_seed, out, err);
    if (pgm_cmd->parsed()) return cmd_export_pgm(pgm_tensor, pgm_out, out);
    if (pd_cmd->parsed()) return cmd_proto_debug(pd_ck, pd_image, pd_out, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace eranet::cli
