#include <gtest/gtest.h>

#include <random>

#include "eranet/proto.hpp"
#include "oracles.hpp"

using namespace eranet;
using namespace eranet::proto;

namespace {

Planes<double> random_features(int d, int h, int w, std::mt19937_64& rng) {
  Planes<double> f(d, h, w);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (auto& v : f.data) v = u(rng);
  return f;
}

ProbMap<double> random_probs(int c, int h, int w, std::mt19937_64& rng) {
  ProbMap<double> p(c, h, w);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (std::size_t i = 0; i < p.plane_size(); ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += (p.at(j, i) = u(rng));
    for (int j = 0; j < c; ++j) p.at(j, i) /= s;
  }
  return p;
}

}  // namespace

TEST(Prototypes, MatchDirectSummation) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const int d = 1 + t % 4;
    const auto f = random_features(d, 4, 4, rng);
    const auto p = random_probs(3, 4, 4, rng);
    const auto got = compute_prototypes(f, p);
    const auto want = oracle::prototypes(f, p);
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < d; ++k) EXPECT_NEAR(got.at(k, j), want[j][k], 1e-9);
  }
}

TEST(Prototypes, EmptyClassGetsZeroColumn) {
  std::mt19937_64 rng(2);
  const auto f = random_features(3, 4, 4, rng);
  ProbMap<double> p(2, 4, 4);
  for (std::size_t i = 0; i < p.plane_size(); ++i) p.at(0, i) = 1.0;
  const auto proto = compute_prototypes(f, p);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(proto.at(k, 1), 0.0);
}

TEST(Prototypes, ScaleInvariance) {
  std::mt19937_64 rng(3);
  const auto f = random_features(4, 6, 6, rng);
  const auto p = random_probs(3, 6, 6, rng);
  const auto base = compute_bundle(f, p);
  const auto base_loss = consistency_loss(base.prediction, p).value;
  for (double c : {0.1, 3.0, 100.0}) {
    Planes<double> scaled = f;
    for (auto& v : scaled.data) v *= c;
    const auto b = compute_bundle(scaled, p);
    for (std::size_t i = 0; i < b.similarity.data.size(); ++i) {
      EXPECT_NEAR(b.similarity.data[i], base.similarity.data[i], 1e-5);
      EXPECT_NEAR(b.prediction.data[i], base.prediction.data[i], 1e-5);
    }
    EXPECT_NEAR(consistency_loss(b.prediction, p).value, base_loss, 1e-5);
  }
}

TEST(Prototypes, SimilarityBoundedAndPredictionNormalised) {
  std::mt19937_64 rng(4);
  const auto b = compute_bundle(random_features(3, 5, 5, rng), random_probs(4, 5, 5, rng));
  for (double v : b.similarity.data) {
    EXPECT_LE(v, 1.0 + 1e-12);
    EXPECT_GE(v, -1.0 - 1e-12);
  }
  for (std::size_t i = 0; i < b.prediction.plane_size(); ++i) {
    double s = 0.0;
    for (int j = 0; j < 4; ++j) s += b.prediction.at(j, i);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Consistency, ZeroExactlyWhenPredictionMatchesTarget) {
  std::mt19937_64 rng(5);
  const auto p = random_probs(3, 4, 4, rng);
  const auto same = consistency_loss(p, p);
  EXPECT_EQ(same.value, 0.0);
  for (double g : same.dlogits.data) EXPECT_EQ(g, 0.0);
  const auto other = random_probs(3, 4, 4, rng);
  EXPECT_GT(consistency_loss(other, p).value, 0.0);
}

TEST(Consistency, ValueIsMeanSquaredDifference) {
  std::mt19937_64 rng(6);
  const auto t = random_probs(3, 4, 5, rng);
  const auto p = random_probs(3, 4, 5, rng);
  double s = 0.0;
  for (std::size_t i = 0; i < t.data.size(); ++i) s += (t.data[i] - p.data[i]) * (t.data[i] - p.data[i]);
  EXPECT_NEAR(consistency_loss(t, p).value, s / 20.0, 1e-12);
}
