#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "blobdrag/blobgeom.hpp"
#include "blobdrag/error.hpp"
#include "oracles.hpp"

using namespace blobdrag;

namespace {

Mask box(std::size_t h, std::size_t w, std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) {
  Mask m(h, w);
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) m.set(r, c);
  return m;
}

Mask random_mask(std::mt19937_64& rng, std::size_t h, std::size_t w, double p) {
  std::bernoulli_distribution bit(p);
  Mask m(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) m.set(r, c, bit(rng));
  return m;
}

}  // namespace

TEST(Rasterize, CircleIsSymmetricUnderQuarterTurn) {
  const Mask m = rasterize_blob({16, 16, 8, 8, 0}, 32, 32);
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t c = 0; c < 32; ++c) EXPECT_EQ(m.at(r, c), m.at(c, 31 - r));
}

TEST(Rasterize, AreaMatchesMembershipOracle) {
  const BlobParams p{16, 16, 8, 4, 0};
  const Mask m = rasterize_blob(p, 32, 32);
  EXPECT_EQ(m.area(), oracle::membership_count(p, 32, 32));
  EXPECT_NEAR(static_cast<double>(m.area()), std::numbers::pi * 32.0, 0.05 * std::numbers::pi * 32.0);
}

TEST(Rasterize, RandomBlobsMatchOracleCellByCell) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pos(4, 28), rad(1.5, 9), ang(-3.0, 3.0);
  for (int i = 0; i < 50; ++i) {
    const BlobParams p{pos(rng), pos(rng), rad(rng), rad(rng), ang(rng)};
    const Mask m = rasterize_blob(p, 32, 32);
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c) ASSERT_EQ(m.at(r, c), oracle::inside_ellipse(p, c + 0.5, r + 0.5));
  }
}

TEST(Rasterize, RightAngleTransposes) {
  const Mask a = rasterize_blob({16, 16, 8, 4, 0}, 32, 32);
  const Mask b = rasterize_blob({16, 16, 8, 4, std::numbers::pi / 2}, 32, 32);
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t c = 0; c < 32; ++c) EXPECT_EQ(a.at(r, c), b.at(c, r));
}

TEST(Rasterize, RejectsBadInput) {
  EXPECT_THROW(rasterize_blob({16, 16, 0, 4, 0}, 32, 32), InvalidArgument);
  EXPECT_THROW(rasterize_blob({16, 16, 4, 4, 0}, 0, 32), InvalidArgument);
}

TEST(Canonical, SwapsAxesAndWrapsAngle) {
  const BlobParams c = BlobParams{3, 4, 2, 5, 0.2}.canonical();
  EXPECT_DOUBLE_EQ(c.a, 5);
  EXPECT_DOUBLE_EQ(c.b, 2);
  EXPECT_GT(c.theta, -std::numbers::pi / 2);
  EXPECT_LE(c.theta, std::numbers::pi / 2);
  EXPECT_EQ(rasterize_blob(c, 16, 16), rasterize_blob({3, 4, 2, 5, 0.2}, 16, 16));
  EXPECT_NEAR(BlobParams({1, 1, 3, 2, std::numbers::pi}).canonical().theta, 0.0, 1e-12);
}

TEST(MaskIou, HandCases) {
  const Mask a = box(8, 8, 0, 0, 2, 2);
  EXPECT_DOUBLE_EQ(mask_iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(mask_iou(a, box(8, 8, 4, 4, 6, 6)), 0.0);
  EXPECT_DOUBLE_EQ(mask_iou(a, box(8, 8, 0, 1, 2, 3)), 2.0 / 6.0);
  EXPECT_DOUBLE_EQ(mask_iou(Mask(8, 8), Mask(8, 8)), 1.0);
  EXPECT_THROW(mask_iou(a, Mask(4, 4)), InvalidArgument);
}

TEST(MaskIou, SymmetricAndOneOnlyWhenEqual) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const Mask a = random_mask(rng, 6, 6, 0.4);
    const Mask b = random_mask(rng, 6, 6, 0.4);
    EXPECT_EQ(mask_iou(a, b), mask_iou(b, a));
    if (!a.empty()) EXPECT_EQ(mask_iou(a, b) == 1.0, a == b);
  }
}

TEST(Dilate, Examples) {
  Mask single(7, 7);
  single.set(3, 3);
  EXPECT_EQ(dilate(single, 3), box(7, 7, 2, 2, 5, 5));
  const Mask m = rasterize_blob({8, 8, 5, 3, 0.4}, 16, 16);
  EXPECT_EQ(dilate(m, 1), m);

  Mask pair(12, 12);
  pair.set(5, 4);
  pair.set(5, 8);
  const Mask d = dilate(pair, 5);
  EXPECT_EQ(d, oracle::minkowski_dilate(pair, 5));
  EXPECT_EQ(d, box(12, 12, 3, 2, 8, 11));
  EXPECT_EQ(d.area(), 5u * 9u);
  EXPECT_THROW(dilate(m, 4), InvalidArgument);
  EXPECT_THROW(dilate(m, -1), InvalidArgument);
}

TEST(Dilate, MatchesMinkowskiOracleExtensiveAndMonotone) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 60; ++i) {
    const Mask m = random_mask(rng, 9 + i % 5, 11, 0.08);
    Mask previous = m;
    for (int k = 1; k <= 7; k += 2) {
      const Mask d = dilate(m, k);
      ASSERT_EQ(d, oracle::minkowski_dilate(m, k));
      for (std::size_t j = 0; j < m.cells(); ++j) {
        if (m[j]) ASSERT_TRUE(d[j]);
        if (previous[j]) ASSERT_TRUE(d[j]);
      }
      previous = d;
    }
  }
}

TEST(ResizeMask, Examples) {
  const Mask m = rasterize_blob({8, 8, 5, 3, 0.4}, 16, 16);
  EXPECT_EQ(resize_mask(m, 16, 16), m);
  EXPECT_EQ(resize_mask(Mask(32, 32, true), 8, 8), Mask(8, 8, true));

  Mask checker(4, 4);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) checker.set(r, c, (r + c) % 2 == 0);
  const Mask small = resize_mask(checker, 2, 2);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(small.at(r, c), checker.at(2 * r, 2 * c));
  EXPECT_THROW(resize_mask(m, 0, 4), InvalidArgument);
}

TEST(ResizeMask, ComposesOverDivisibleSizes) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 40; ++i) {
    const Mask m = random_mask(rng, 32, 32, 0.5);
    EXPECT_EQ(resize_mask(resize_mask(m, 16, 16), 8, 8), resize_mask(m, 8, 8));
    EXPECT_EQ(resize_mask(resize_mask(m, 16, 8), 4, 4), resize_mask(m, 4, 4));
  }
}

TEST(MaskUnion, Examples) {
  const Mask a = box(8, 8, 1, 1, 3, 4);
  const Mask b = box(8, 8, 5, 5, 7, 7);
  EXPECT_EQ(mask_union(a, Mask(8, 8)), a);
  EXPECT_EQ(mask_union(a, a), a);
  EXPECT_EQ(mask_union(a, b).area(), a.area() + b.area());
  EXPECT_THROW(mask_union(a, Mask(4, 8)), InvalidArgument);
}

TEST(FitEllipse, TiltedEllipseRoundTrip) {
  const Mask target = rasterize_blob({16, 16, 8, 4, 0.6}, 32, 32);
  const BlobParams fit = fit_ellipse(target);
  EXPECT_GE(mask_iou(rasterize_blob(fit, 32, 32), target), 0.95);
}

TEST(FitEllipse, CircleRecoversParameters) {
  const BlobParams fit = fit_ellipse(rasterize_blob({16, 16, 8, 8, 0}, 32, 32));
  EXPECT_NEAR(fit.cx, 16, 0.5);
  EXPECT_NEAR(fit.cy, 16, 0.5);
  EXPECT_NEAR(fit.a, 8, 0.5);
  EXPECT_NEAR(fit.b, 8, 0.5);
}

TEST(FitEllipse, SquareReachesGridSearchBound) {
  const Mask square = box(12, 12, 4, 4, 8, 8);
  // Oracle: best axis-aligned ellipse centred on the square over a radius grid.
  double best = 0.0;
  for (double a = 1.0; a <= 4.0; a += 0.05)
    for (double b = 1.0; b <= 4.0; b += 0.05)
      best = std::max(best, mask_iou(rasterize_blob({6, 6, a, b, 0}, 12, 12), square));
  EXPECT_GE(best, 0.7);
  const EllipseFit fit = fit_ellipse_detailed(square);
  EXPECT_GE(fit.iou, 0.7);
  EXPECT_GE(fit.iou, best - 1e-12);
}

TEST(FitEllipse, ReportedIouIsAchieved) {
  const Mask target = rasterize_blob({10, 20, 6, 3, -0.9}, 32, 32);
  const EllipseFit fit = fit_ellipse_detailed(target);
  EXPECT_DOUBLE_EQ(fit.iou, mask_iou(rasterize_blob(fit.params, 32, 32), target));
  EXPECT_GE(fit.params.a, fit.params.b);
}

TEST(FitEllipse, RandomRoundTripProperty) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> rad(3.0, 32.0 / 3.0), ang(-1.5, 1.5), unit(0, 1);
  int checked = 0;
  while (checked < 40) {
    const BlobParams p{8 + 16 * unit(rng), 8 + 16 * unit(rng), rad(rng), rad(rng), ang(rng)};
    if (!ellipse_within(p, 32, 32)) continue;
    const Mask target = rasterize_blob(p, 32, 32);
    EXPECT_GE(mask_iou(rasterize_blob(fit_ellipse(target), 32, 32), target), 0.9);
    ++checked;
  }
}

TEST(FitEllipse, DegenerateMask) {
  Mask m(8, 8);
  m.set(2, 2);
  m.set(2, 3);
  EXPECT_THROW(fit_ellipse(m), DegenerateMask);
  EXPECT_THROW(fit_ellipse(Mask(8, 8)), DegenerateMask);
}

TEST(BoundingBox, TightAroundCells) {
  const CellBox b = bounding_box(box(10, 10, 2, 3, 5, 9));
  EXPECT_EQ(b.row0, 2u);
  EXPECT_EQ(b.col0, 3u);
  EXPECT_EQ(b.rows(), 3u);
  EXPECT_EQ(b.cols(), 6u);
  EXPECT_TRUE(bounding_box(Mask(4, 4)).empty());
}
