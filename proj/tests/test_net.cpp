#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "eranet/net.hpp"
#include "eranet/phantom.hpp"
#include "eranet/trainer.hpp"
#include "oracles.hpp"

using namespace eranet;
using namespace eranet::net;

namespace {

Image2D random_image(int h, int w, Rng& rng) {
  Image2D img(h, w);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : img.data) v = u(rng);
  return img;
}

BasicParams<double> random_params(int k, int d, int c, Rng& rng) {
  return init_params(k, d, c, rng).cast<double>();
}

}  // namespace

TEST(Forward, MatchesNaiveConvolutionOracle) {
  Rng rng(2);
  for (int t = 0; t < 5; ++t) {
    const auto p = random_params(3, 5, 4, rng);
    const Image2D img = random_image(7 + t, 9, rng);
    Planes<double> features;
    const auto want = oracle::forward_probs(p, img, &features);
    const auto got = forward(p, img);
    ASSERT_EQ(got.probs.data.size(), want.data.size());
    for (std::size_t i = 0; i < want.data.size(); ++i) EXPECT_NEAR(got.probs.data[i], want.data[i], 1e-12);
    for (std::size_t i = 0; i < features.data.size(); ++i) EXPECT_NEAR(got.features.data[i], features.data[i], 1e-12);
  }
}

TEST(Forward, ProbabilitiesSumToOneInFloat) {
  Rng rng(8);
  const ModelParams p = init_params(8, 16, 4, rng);
  const auto pass = forward(p, random_image(16, 16, rng));
  for (std::size_t i = 0; i < pass.probs.plane_size(); ++i) {
    float s = 0.0f;
    for (int c = 0; c < 4; ++c) {
      EXPECT_GE(pass.probs.at(c, i), 0.0f);
      s += pass.probs.at(c, i);
    }
    EXPECT_NEAR(s, 1.0f, 1e-5f);
  }
}

TEST(Init, KaimingScale) {
  Rng rng(1);
  const ModelParams p = init_params(16, 32, 4, rng);
  double ss = 0.0;
  const std::size_t n = 9 * 32 * 16;
  for (std::size_t i = 0; i < n; ++i) ss += double(p.values[p.conv2_w() + i]) * p.values[p.conv2_w() + i];
  EXPECT_NEAR(std::sqrt(ss / n), std::sqrt(2.0 / (9 * 16)), 0.01);
  for (int o = 0; o < 32; ++o) EXPECT_EQ(p.values[p.conv2_b() + o], 0.0f);
}

TEST(GradCheck, EveryTermWithinTolerance) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const GradCheckReport r = grad_check(seed);
    EXPECT_LT(r.l_sup, 1e-4) << seed;
    EXPECT_LT(r.l_unsup, 1e-4) << seed;
    EXPECT_LT(r.l_consis, 1e-4) << seed;
    EXPECT_LT(r.composed, 1e-3) << seed;
  }
}

TEST(Losses, PerfectPredictionHasZeroSupervisedLoss) {
  ClassMask gt(4, 4, 3);
  gt.at(1, 1) = 1;
  gt.at(2, 2) = 2;
  ProbMap<double> probs(3, 4, 4);
  for (std::size_t i = 0; i < gt.data.size(); ++i) probs.at(gt.data[i], i) = 1.0;
  EXPECT_NEAR(supervised_loss(probs, gt).value, 0.0, 1e-9);
  EXPECT_NEAR(unsupervised_loss(probs, gt).value, 0.0, 1e-12);
}

TEST(Losses, UniformPredictionCrossEntropyIsLogC) {
  ClassMask target(3, 5, 4);
  ProbMap<double> probs(4, 3, 5, 0.25);
  EXPECT_NEAR(unsupervised_loss(probs, target).value, std::log(4.0), 1e-12);
  // teacher overload: targets are the teacher's argmax
  ProbMap<double> teacher(4, 3, 5, 0.0);
  for (std::size_t i = 0; i < teacher.plane_size(); ++i) teacher.at(2, i) = 1.0;
  EXPECT_NEAR(unsupervised_loss(probs, teacher).value, std::log(4.0), 1e-12);
}

TEST(Schedules, RampAndPolyDecay) {
  EXPECT_EQ(lambda_at(200, 200), 0.1);
  EXPECT_NEAR(lambda_at(100, 200), 0.1 * std::exp(-2.5), 1e-12);
  EXPECT_NEAR(lambda_at(0, 200), 0.1 * std::exp(-10.0), 1e-15);
  EXPECT_NEAR(lr_at(100, 200, 0.01), 0.01 * std::pow(0.5, 0.9), 1e-12);
  EXPECT_EQ(lr_at(0, 200, 0.01), 0.01);
  EXPECT_EQ(lr_at(200, 200, 0.01), 0.0);
  EXPECT_THROW(lambda_at(201, 200), std::invalid_argument);
}

TEST(Schedules, RampIsMonotone) {
  double prev = -1.0;
  for (int e = 0; e <= 40; ++e) {
    const double l = lambda_at(e, 40);
    EXPECT_GT(l, prev);
    prev = l;
  }
}

TEST(Ema, BoundaryDecays) {
  Rng rng(3);
  const ModelParams student = init_params(2, 3, 2, rng);
  const ModelParams start = init_params(2, 3, 2, rng);
  ModelParams t = start;
  ema_update(t, student, 1.0);
  EXPECT_EQ(t, start);
  ema_update(t, student, 0.0);
  EXPECT_EQ(t, student);
  t = start;
  ema_update(t, student, 0.99);
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    EXPECT_FLOAT_EQ(t.values[i], 0.99f * start.values[i] + 0.01f * student.values[i]);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  BasicParams<double> p(1, 1, 2), g(1, 1, 2);
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = (i % 2 ? 1.0 : -1.0) * double(i + 1);
  OptimizerState<double> st;
  adam_step(p, g, st, 0.01);
  EXPECT_EQ(st.step, 1);
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    EXPECT_NEAR(p.values[i], -0.01 * (g.values[i] > 0 ? 1.0 : -1.0), 1e-9);
  }
}

TEST(Objective, DisabledPrototypeTermIsStructuralZero) {
  Rng rng(4);
  const ModelParams p = init_params(4, 6, 4, rng);
  std::vector<SupervisedSample> l{{random_image(10, 10, rng), ClassMask(10, 10, 4)}};
  std::vector<UnsupervisedSample<float>> u{{random_image(10, 10, rng), ClassMask(10, 10, 4), std::nullopt, std::nullopt}};
  const auto off = u1_objective<float>(p, l, u, 0.1, false);
  EXPECT_EQ(off.parts.l_consis, 0.0);
  const auto on = u1_objective<float>(p, l, u, 0.1, true);
  EXPECT_GT(on.parts.l_consis, 0.0);
  EXPECT_NEAR(on.parts.total, on.parts.l_sup + 0.1 * on.parts.l_consis + on.parts.l_unsup, 1e-6);
  const auto sup = u1_objective<float>(p, l, {}, 0.1, true);
  EXPECT_EQ(sup.parts.l_unsup, 0.0);
  EXPECT_EQ(sup.parts.l_consis, 0.0);
}

TEST(TrainStep, TeacherTracksStudentByEma) {
  Rng rng(6);
  phantom::PhantomConfig cfg;
  cfg.size = 32;
  const auto a = phantom::generate_slice(cfg, "a", 1);
  const auto b = phantom::generate_slice(cfg, "b", 1);
  TrainState st = TrainState::fresh(init_params(4, 6, 4, rng));
  const ModelParams teacher_before = st.teacher;
  TrainConfig tc;
  tc.epochs = 4;
  std::vector<LabeledItem> l{{a.image, a.mask, 11}};
  std::vector<UnlabeledItem> u{{b.image, 12}};
  const StepStats s = train_step_u1(st, l, u, 1, tc);
  EXPECT_EQ(s.era_applied + s.era_skipped, 2);
  ModelParams expect = teacher_before;
  ema_update(expect, st.student, 0.99);
  EXPECT_EQ(st.teacher, expect);
  EXPECT_NE(st.student, teacher_before);
}

TEST(Trainer, CheckpointEpochsAreEquidistantAndIncludeLast) {
  EXPECT_EQ(checkpoint_epochs(200, 5), (std::vector<int>{40, 80, 120, 160, 200}));
  EXPECT_EQ(checkpoint_epochs(7, 5), (std::vector<int>{2, 3, 5, 6, 7}));
  EXPECT_EQ(checkpoint_epochs(3, 5), (std::vector<int>{1, 2, 3}));
}

TEST(Trainer, SupervisedTrainingReducesLossAndIsDeterministic) {
  phantom::PhantomConfig cfg;
  cfg.size = 32;
  std::vector<TrainingPair> pairs;
  for (int i = 0; i < 4; ++i) {
    auto r = phantom::generate_slice(cfg, "p" + std::to_string(i), 3);
    pairs.push_back({r.id, r.image, r.mask, LabelSource::GroundTruth});
  }
  Rng rng(1);
  const ModelParams init = init_params(4, 8, 4, rng);
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 2;
  tc.labeled_per_batch = 1;
  const auto r1 = train_supervised(pairs, init, tc, true, 5, "t");
  const auto r2 = train_supervised(pairs, init, tc, true, 5, "t");
  ASSERT_EQ(r1.curve.size(), 6u);
  EXPECT_EQ(r1.curve.front().steps, 2);
  EXPECT_LT(r1.curve.back().mean.l_sup, r1.curve.front().mean.l_sup);
  EXPECT_EQ(r1.student, r2.student);
  EXPECT_GT(r1.era_applied, 0);
}

TEST(Trainer, MeanTeacherCapturesCheckpoints) {
  phantom::PhantomConfig cfg;
  cfg.size = 32;
  std::vector<TrainingPair> labeled;
  std::vector<UnlabeledImage> unlabeled;
  for (int i = 0; i < 6; ++i) {
    auto r = phantom::generate_slice(cfg, "m" + std::to_string(i), 4);
    if (i < 2) {
      labeled.push_back({r.id, r.image, r.mask, LabelSource::GroundTruth});
    } else {
      unlabeled.push_back({r.id, r.image});
    }
  }
  Rng rng(1);
  TrainConfig tc;
  tc.epochs = 5;
  tc.batch_size = 4;
  tc.labeled_per_batch = 2;
  const auto r = train_mean_teacher(labeled, unlabeled, init_params(4, 6, 4, rng), tc, 9, 5, "u1");
  EXPECT_EQ(r.checkpoint_epochs, (std::vector<int>{1, 2, 3, 4, 5}));
  ASSERT_EQ(r.checkpoints.size(), 5u);
  EXPECT_EQ(r.checkpoints.back(), r.student);
  EXPECT_NE(r.teacher, r.student);
  for (const auto& e : r.curve) {
    EXPECT_GT(e.mean.l_unsup, 0.0);
    EXPECT_GT(e.mean.lambda_t, 0.0);
  }
}
