#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "eranet/era.hpp"
#include "oracles.hpp"

using namespace eranet;
using namespace eranet::era;

namespace {

ClassMask rect(int h, int w, int y0, int y1, int x0, int x1, std::uint8_t v = 1, int classes = 2) {
  ClassMask m(h, w, classes);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) m.at(y, x) = v;
  return m;
}

void expect_same(const EraResult& got, const oracle::EraOutcome& want) {
  ASSERT_EQ(got.applied(), want.applied);
  EXPECT_EQ(got.mask, want.mask);
  ASSERT_EQ(got.image.data.size(), want.image.data.size());
  for (std::size_t i = 0; i < got.image.data.size(); ++i) {
    ASSERT_EQ(std::bit_cast<std::uint32_t>(got.image.data[i]), std::bit_cast<std::uint32_t>(want.image.data[i]));
  }
  if (!got.applied()) return;
  const EraPlan& p = *got.plan;
  EXPECT_EQ(p.x_rl, want.x_rl);
  EXPECT_EQ(p.x_rr, want.x_rr);
  EXPECT_EQ(p.box_left, (Box{want.lx0, want.ly0, want.lx1, want.ly1}));
  EXPECT_EQ(p.box_right, (Box{want.rx0, want.ry0, want.rx1, want.ry1}));
  EXPECT_EQ(p.range_left.lo, want.lo_l);
  EXPECT_EQ(p.range_right.hi, want.hi_r);
}

}  // namespace

TEST(Topology, SingleBlobIsTypeA) {
  const auto t = classify_topology(rect(10, 10, 2, 4, 1, 6), EraConfig{});
  EXPECT_EQ(t.kind, TopologyKind::TypeA);
  EXPECT_EQ(t.pieces.size(), 1u);
}

TEST(Topology, TwoBlobsOrderedByCentroid) {
  ClassMask m = rect(12, 20, 5, 7, 12, 17);
  for (int y = 2; y <= 4; ++y)
    for (int x = 1; x <= 4; ++x) m.at(y, x) = 1;
  const auto t = classify_topology(m, EraConfig{});
  ASSERT_EQ(t.kind, TopologyKind::TypeB);
  EXPECT_EQ(t.left().at(3, 2), 1);
  EXPECT_EQ(t.right().at(6, 15), 1);
}

TEST(Topology, SpeckBelowMinimumIsIgnored) {
  ClassMask m = rect(12, 12, 2, 5, 2, 6);  // 20 px
  m.at(10, 10) = m.at(10, 11) = 1;
  EXPECT_EQ(classify_topology(m, EraConfig{}).kind, TopologyKind::TypeA);
  EXPECT_EQ(classify_topology(ClassMask(8, 8, 2), EraConfig{}).kind, TopologyKind::Degenerate);
}

TEST(Topology, ComponentsMatchUnionFindOracle) {
  Rng rng(4);
  for (int t = 0; t < 60; ++t) {
    const auto c = oracle::random_era_case(t % 4, rng);
    const ClassMask men = meniscus_mask(c.mask, {1, 2});
    const auto got = connected_components(men);
    const auto want = oracle::components(men);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].count(1), want[i].pixels.size());
      for (const auto& [x, y] : want[i].pixels) EXPECT_EQ(got[i].at(y, x), 1);
    }
  }
}

TEST(ExtremePoints, RectangleSplitsAtMidline) {
  const auto t = classify_topology(rect(16, 16, 4, 6, 2, 9), EraConfig{});
  const auto ep = extreme_points(t);
  EXPECT_EQ(ep.fl, (Pixel{2, 4}));
  EXPECT_EQ(ep.fr, (Pixel{9, 4}));
  EXPECT_EQ(ep.ul, (Pixel{2, 4}));
  EXPECT_EQ(ep.bl, (Pixel{2, 6}));
  EXPECT_EQ(ep.ur, (Pixel{6, 4}));
  EXPECT_EQ(ep.br, (Pixel{6, 6}));
}

TEST(ExtremePoints, SinglePixelPieceCollapses) {
  ClassMask m(12, 12, 2);
  m.at(5, 5) = 1;
  ClassMask right = rect(12, 12, 2, 3, 8, 10);
  MeniscusTopology t;
  t.kind = TopologyKind::TypeB;
  t.pieces = {m, right};
  const auto ep = extreme_points(t);
  EXPECT_EQ(ep.fl, (Pixel{5, 5}));
  EXPECT_EQ(ep.ul, (Pixel{5, 5}));
  EXPECT_EQ(ep.bl, (Pixel{5, 5}));
  EXPECT_THROW(extreme_points(MeniscusTopology{}), std::invalid_argument);
}

TEST(ReplacementPoints, IntervalsFromExample) {
  ExtremePoints ep;
  ep.fl = {4, 0};
  ep.fr = {11, 0};
  MeniscusTopology t;
  t.kind = TopologyKind::TypeA;
  std::set<int> left, right;
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(s);
    const auto p = select_replacement_points(ep, t, EraConfig{}, rng);
    ASSERT_TRUE(p);
    left.insert(p->first);
    right.insert(p->second);
  }
  EXPECT_EQ(left, (std::set<int>{5, 6}));
  EXPECT_EQ(right, (std::set<int>{9, 10}));

  Rng a(3), b(3);
  EXPECT_EQ(select_replacement_points(ep, t, EraConfig{}, a), select_replacement_points(ep, t, EraConfig{}, b));

  ep.fr = {6, 0};
  Rng rng(1);
  EXPECT_FALSE(select_replacement_points(ep, t, EraConfig{}, rng));
}

TEST(ReplacementPoints, OpenIntervalExcludesExactEndpoint) {
  // 0.3 * 10 lands on an integer up to rounding; the endpoint stays excluded.
  EXPECT_EQ(open_integer_interval(0.0, 0.3 * 10), (std::pair{1, 2}));
  EXPECT_EQ(open_integer_interval(4.0, 6.1), (std::pair{5, 6}));
}

TEST(BoundingBoxes, FormulaWithClamping) {
  const auto ep = extreme_points(classify_topology(rect(16, 16, 4, 6, 2, 9), EraConfig{}));
  const auto [l, r] = build_bounding_boxes(ep, EraConfig{}, 16, 16);
  EXPECT_EQ(l, (Box{0, 4, 2, 6}));
  EXPECT_EQ(r, (Box{6, 4, 14, 6}));

  ExtremePoints corner;
  corner.fl = corner.ul = corner.bl = {0, 0};
  corner.fr = corner.ur = corner.br = {15, 15};
  const auto [cl, cr] = build_bounding_boxes(corner, EraConfig{}, 16, 16);
  EXPECT_EQ(cl.x0, 0);
  EXPECT_EQ(cr.x1, 15);

  ExtremePoints flipped = ep;
  flipped.ul = {2, 6};
  flipped.bl = {2, 4};
  EXPECT_EQ(build_bounding_boxes(flipped, EraConfig{}, 16, 16).first, (Box{0, 4, 2, 6}));
}

TEST(BackgroundRange, ExcludesMeniscusPixels) {
  Image2D img(4, 4, 0.4f);
  ClassMask men(4, 4, 2);
  EXPECT_EQ(background_range(img, men, Box{0, 0, 3, 3})->lo, 0.4f);
  img.at(0, 0) = 0.1f;
  img.at(1, 1) = 0.9f;
  img.at(2, 2) = 0.0f;
  men.at(2, 2) = 1;
  const auto r = background_range(img, men, Box{0, 0, 2, 2});
  EXPECT_EQ(r->lo, 0.1f);
  EXPECT_EQ(r->hi, 0.9f);
  ClassMask all(4, 4, 2, 1);
  EXPECT_FALSE(background_range(img, all, Box{0, 0, 3, 3}));
}

TEST(ApplyEra, EmptyMaskPassesThrough) {
  Image2D img(10, 10, 0.3f);
  ClassMask m(10, 10, 4);
  Rng rng(1);
  const auto r = apply_era(img, m, {1, 2}, EraConfig{}, rng);
  EXPECT_FALSE(r.applied());
  EXPECT_EQ(r.skipped, SkipReason::DegenerateTopology);
  EXPECT_EQ(r.mask, m);
  EXPECT_EQ(r.image.data, img.data);
}

TEST(ApplyEra, RectangleTruncatesOuterColumns) {
  ClassMask m = rect(16, 16, 4, 6, 4, 11, 1, 4);
  Image2D img(16, 16, 0.0f);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) img.at(y, x) = m.at(y, x) ? 0.9f : 0.2f + 0.01f * float(x);
  bool found = false;
  for (std::uint64_t s = 0; s < 100 && !found; ++s) {
    Rng rng(s);
    const auto r = apply_era(img, m, {1, 2}, EraConfig{}, rng);
    ASSERT_TRUE(r.applied());
    if (r.plan->x_rl != 5 || r.plan->x_rr != 10) continue;
    found = true;
    for (int y = 4; y <= 6; ++y) {
      EXPECT_EQ(r.mask.at(y, 4), 0);
      EXPECT_EQ(r.mask.at(y, 11), 0);
      for (int x = 5; x <= 10; ++x) EXPECT_EQ(r.mask.at(y, x), 1);
    }
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        if (r.image.at(y, x) == img.at(y, x)) continue;
        const bool left = x < 5;
        const auto& range = left ? r.plan->range_left : r.plan->range_right;
        const auto& box = left ? r.plan->box_left : r.plan->box_right;
        EXPECT_TRUE(box.contains(x, y));
        EXPECT_GE(r.image.at(y, x), range.lo);
        EXPECT_LE(r.image.at(y, x), range.hi);
      }
    }
  }
  EXPECT_TRUE(found);
}

TEST(ApplyEra, MatchesStraightLineReference) {
  Rng cases(17);
  for (int t = 0; t < 80; ++t) {
    const auto c = oracle::random_era_case(t % 4, cases);
    const std::uint64_t seed = 1000 + t;
    Rng a(seed), b(seed);
    const auto got = apply_era(c.image, c.mask, {1, 2}, EraConfig{}, a);
    const auto want = oracle::era_reference(c.image, c.mask, {1, 2}, 0.3, 5, 5, b);
    SCOPED_TRACE(t);
    expect_same(got, want);
  }
}

TEST(ApplyEra, NonMeniscusClassesUntouchedAndDeterministic) {
  Rng cases(5);
  for (int t = 0; t < 40; ++t) {
    const auto c = oracle::random_era_case(1 + t % 3, cases);
    Rng a(t), b(t);
    const auto r1 = apply_era(c.image, c.mask, {1, 2}, EraConfig{}, a);
    const auto r2 = apply_era(c.image, c.mask, {1, 2}, EraConfig{}, b);
    EXPECT_EQ(r1.mask, r2.mask);
    EXPECT_EQ(r1.image.data, r2.image.data);
    for (std::size_t i = 0; i < c.mask.data.size(); ++i) {
      if (c.mask.data[i] == 3 || c.mask.data[i] == 0) EXPECT_EQ(r1.mask.data[i], c.mask.data[i]);
      if (r1.mask.data[i] != 0) EXPECT_EQ(r1.mask.data[i], c.mask.data[i]);
    }
  }
}

TEST(ApplyEra, RejectsMismatchedShapes) {
  Rng rng(1);
  EXPECT_THROW(apply_era(Image2D(8, 8), ClassMask(8, 9, 2), {1}, EraConfig{}, rng), std::invalid_argument);
  EraConfig bad;
  bad.edge_fraction = 0.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}
