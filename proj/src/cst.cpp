#include "eranet/cst.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace eranet::cst {

void CstConfig::validate() const {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("CST threshold must lie in [0, 1]");
  if (checkpoints < 2) throw std::invalid_argument("CST needs at least 2 checkpoints");
}

std::string_view to_string(Assignment a) { return a == Assignment::Reliable ? "reliable" : "unreliable"; }

double multiclass_dsc(const ClassMask& a, const ClassMask& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("pseudo-label sizes differ");
  const int classes = std::max(a.num_classes, b.num_classes);
  if (classes < 2) throw std::invalid_argument("multi-class DSC needs a foreground class");
  double sum = 0.0;
  for (int c = 1; c < classes; ++c) sum += dsc(a.binary(c), b.binary(c));
  return sum / (classes - 1);
}

double reliability_score(std::span<const ClassMask> pseudo_labels) {
  const std::size_t k = pseudo_labels.size();
  if (k < 2) throw std::invalid_argument("reliability score needs at least 2 pseudo-labels");
  const ClassMask& last = pseudo_labels.back();
  double sum = 0.0;
  for (std::size_t j = 0; j + 1 < k; ++j) sum += multiclass_dsc(pseudo_labels[j], last);
  return sum / static_cast<double>(k - 1);
}

Partition partition(std::span<const ReliabilityRecord> records, double threshold) {
  Partition p;
  for (const auto& r : records) (r.score >= threshold ? p.reliable : p.unreliable).push_back(r.id);
  return p;
}

std::vector<ReliabilityRecord> score_unlabeled(std::span<const net::ModelParams> checkpoints,
                                               std::span<const net::UnlabeledImage> unlabeled,
                                               double threshold) {
  if (checkpoints.size() < 2) throw std::invalid_argument("reliability scoring needs at least 2 checkpoints");
  std::vector<ReliabilityRecord> out;
  out.reserve(unlabeled.size());
  for (const auto& u : unlabeled) {
    ReliabilityRecord r;
    r.id = u.id;
    for (const auto& ck : checkpoints) r.pseudo_labels.push_back(net::predict(ck, u.image));
    r.score = reliability_score(r.pseudo_labels);
    r.assignment = r.score >= threshold ? Assignment::Reliable : Assignment::Unreliable;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<int> reliability_histogram(std::span<const ReliabilityRecord> records, int bins) {
  if (bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  std::vector<int> h(bins, 0);
  for (const auto& r : records) {
    const int b = std::clamp(static_cast<int>(r.score * bins), 0, bins - 1);
    ++h[b];
  }
  return h;
}

std::optional<std::string> validate_provenance(CstStage stage, std::span<const net::TrainingPair> pairs,
                                               std::span<const std::string> labeled_ids,
                                               const Partition& part) {
  const std::set<std::string> labeled(labeled_ids.begin(), labeled_ids.end());
  const std::set<std::string> reliable(part.reliable.begin(), part.reliable.end());
  const std::set<std::string> unreliable(part.unreliable.begin(), part.unreliable.end());
  for (const auto& p : pairs) {
    bool ok = false;
    switch (p.source) {
      case net::LabelSource::GroundTruth: ok = labeled.count(p.id) > 0; break;
      case net::LabelSource::FinalCheckpoint: ok = reliable.count(p.id) > 0; break;
      case net::LabelSource::SelfTrainedU3: ok = stage == CstStage::U4 && unreliable.count(p.id) > 0; break;
    }
    if (!ok) {
      return "pair " + p.id + " with label source " + std::string(net::to_string(p.source)) +
             " is not allowed in " + (stage == CstStage::U3 ? "U3" : "U4");
    }
  }
  return std::nullopt;
}

std::vector<net::TrainingPair> build_u3_pairs(const std::vector<net::TrainingPair>& labeled,
                                              const std::vector<net::UnlabeledImage>& unlabeled,
                                              std::span<const ReliabilityRecord> records) {
  if (records.size() != unlabeled.size()) throw std::invalid_argument("one reliability record per unlabeled image");
  std::vector<net::TrainingPair> out = labeled;
  // The last pseudo-label of each record is the final checkpoint's prediction.
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    if (records[i].assignment != Assignment::Reliable) continue;
    out.push_back({unlabeled[i].id, unlabeled[i].image, records[i].pseudo_labels.back(),
                   net::LabelSource::FinalCheckpoint});
  }
  return out;
}

std::vector<net::TrainingPair> build_u4_pairs(const std::vector<net::TrainingPair>& u3_pairs,
                                              const std::vector<net::UnlabeledImage>& unlabeled,
                                              std::span<const ReliabilityRecord> records,
                                              const net::ModelParams& u3) {
  if (records.size() != unlabeled.size()) throw std::invalid_argument("one reliability record per unlabeled image");
  std::vector<net::TrainingPair> out = u3_pairs;
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    if (records[i].assignment == Assignment::Reliable) continue;
    out.push_back({unlabeled[i].id, unlabeled[i].image, net::predict(u3, unlabeled[i].image),
                   net::LabelSource::SelfTrainedU3});
  }
  return out;
}

CstResult run_cst(std::span<const net::ModelParams> u1_checkpoints,
                  const std::vector<net::TrainingPair>& labeled,
                  const std::vector<net::UnlabeledImage>& unlabeled, const CstConfig& cfg,
                  const net::TrainConfig& train, const net::ModelParams& init, bool era_u3,
                  std::uint64_t seed) {
  cfg.validate();
  if (u1_checkpoints.empty()) throw std::invalid_argument("CST needs the U1 checkpoints");
  CstResult out;
  std::vector<std::string> labeled_ids;
  for (const auto& p : labeled) labeled_ids.push_back(p.id);

  if (u1_checkpoints.size() >= 2) {
    out.records = score_unlabeled(u1_checkpoints, unlabeled, cfg.threshold);
  } else if (!unlabeled.empty()) {
    throw std::invalid_argument("reliability scoring needs at least 2 checkpoints");
  }
  out.partition = partition(out.records, cfg.threshold);

  out.u3_pairs = build_u3_pairs(labeled, unlabeled, out.records);
  if (out.u3_pairs.size() == labeled.size() && !unlabeled.empty()) {
    out.warnings.push_back("no unlabeled image reached the reliability threshold; U3 trains on labeled data only");
  }
  if (auto err = validate_provenance(CstStage::U3, out.u3_pairs, labeled_ids, out.partition)) {
    throw std::logic_error(*err);
  }
  out.u3 = net::train_supervised(out.u3_pairs, init, train, era_u3, seed, "u3");

  out.u4_pairs = build_u4_pairs(out.u3_pairs, unlabeled, out.records, out.u3.student);
  if (auto err = validate_provenance(CstStage::U4, out.u4_pairs, labeled_ids, out.partition)) {
    throw std::logic_error(*err);
  }
  out.u4 = net::train_supervised(out.u4_pairs, init, train, false, seed, "u4");
  return out;
}

}  // namespace eranet::cst
