#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"
#include "topobda/grid.hpp"
#include "topobda/random.hpp"

using namespace topobda;

namespace {

FeatureGrid random_grid(Rng& rng, std::size_t h, std::size_t w, std::size_t c) {
  std::vector<double> data(h * w * c);
  for (double& v : data) v = normal(rng, 0, 1);
  return FeatureGrid(h, w, c, data);
}

}  // namespace

TEST(FeatureGrid, RejectsBadConstruction) {
  EXPECT_THROW(FeatureGrid(0, 2, 2, 0.0), ShapeError);
  EXPECT_THROW(FeatureGrid(2, 2, 2, std::vector<double>(7, 0.0)), ShapeError);
  std::vector<double> bad(8, 0.0);
  bad[3] = std::nan("");
  EXPECT_THROW(FeatureGrid(2, 2, 2, bad), DomainError);
}

TEST(Bilinear, CellCenterReturnsCell) {
  Rng rng = make_rng(1);
  const FeatureGrid g = random_grid(rng, 5, 7, 3);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 7; ++c) {
      const auto v = bilinear_sample(g, g.cell_center(r, c));
      for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(v[ch], g.at(r, c, ch));
    }
}

TEST(Bilinear, MidpointIsMean) {
  Rng rng = make_rng(2);
  const FeatureGrid g = random_grid(rng, 4, 4, 2);
  const SamplePoint a = g.cell_center(1, 1), b = g.cell_center(1, 2);
  const auto v = bilinear_sample(g, {(a.x + b.x) / 2, a.y});
  for (std::size_t ch = 0; ch < 2; ++ch) EXPECT_NEAR(v[ch], 0.5 * (g.at(1, 1, ch) + g.at(1, 2, ch)), 1e-15);
}

TEST(Bilinear, OutOfBoundsIsZero) {
  const FeatureGrid g(4, 4, 3, 2.5);
  for (double v : bilinear_sample(g, SamplePoint{-1, -1})) EXPECT_EQ(v, 0.0);
}

TEST(Bilinear, NanThrows) {
  const FeatureGrid g(4, 4, 1, 1.0);
  EXPECT_THROW(bilinear_sample(g, SamplePoint{std::nan(""), 0.5}), DomainError);
}

TEST(Bilinear, MatchesOracle) {
  Rng rng = make_rng(3);
  const FeatureGrid g = random_grid(rng, 6, 9, 4);
  for (int i = 0; i < 500; ++i) {
    const SamplePoint p{uniform(rng, -0.2, 1.2), uniform(rng, -0.2, 1.2)};
    const auto v = bilinear_sample(g, p);
    for (std::size_t ch = 0; ch < 4; ++ch) EXPECT_NEAR(v[ch], oracle::bilinear(g, p.x, p.y, ch), 1e-12);
  }
}

TEST(Bilinear, LinearInGridData) {
  Rng rng = make_rng(4);
  const FeatureGrid g1 = random_grid(rng, 6, 6, 3), g2 = random_grid(rng, 6, 6, 3);
  const double a = 0.7, b = -1.3;
  std::vector<double> mix(g1.data().size());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * g1.data()[i] + b * g2.data()[i];
  const FeatureGrid g(6, 6, 3, mix);
  for (int i = 0; i < 200; ++i) {
    const SamplePoint p{uniform(rng, 0, 1), uniform(rng, 0, 1)};
    const auto v = bilinear_sample(g, p), v1 = bilinear_sample(g1, p), v2 = bilinear_sample(g2, p);
    for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_NEAR(v[ch], a * v1[ch] + b * v2[ch], 1e-12);
  }
}

TEST(Bilinear, InteriorValuesBoundedByNeighbors) {
  Rng rng = make_rng(5);
  const FeatureGrid g = random_grid(rng, 8, 8, 1);
  for (int i = 0; i < 500; ++i) {
    const SamplePoint p{uniform(rng, 0.0625, 0.9375), uniform(rng, 0.0625, 0.9375)};
    const BilinearStencil s = bilinear_stencil(8, 8, p);
    double lo = 1e300, hi = -1e300;
    for (const SampleTap& t : s.taps) {
      ASSERT_TRUE(t.in_bounds);
      lo = std::min(lo, g.at(static_cast<std::size_t>(t.row), static_cast<std::size_t>(t.col), 0));
      hi = std::max(hi, g.at(static_cast<std::size_t>(t.row), static_cast<std::size_t>(t.col), 0));
    }
    const double v = bilinear_sample(g, p)[0];
    EXPECT_GE(v, lo - 1e-12);
    EXPECT_LE(v, hi + 1e-12);
  }
}

TEST(BilinearGrad, ConstantGridHasZeroSpatialGradient) {
  const FeatureGrid g(6, 6, 2, 3.0);
  const SampleGradient d = bilinear_sample_grad(g, SamplePoint{0.4, 0.55});
  for (std::size_t ch = 0; ch < 2; ++ch) {
    EXPECT_EQ(d.d_dx[ch], 0.0);
    EXPECT_EQ(d.d_dy[ch], 0.0);
  }
}

TEST(BilinearGrad, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = make_rng(seed, 77);
    const FeatureGrid g = random_grid(rng, 8, 8, 4);
    int checked = 0;
    while (checked < 100) {
      const SamplePoint p{uniform(rng, 0.07, 0.93), uniform(rng, 0.07, 0.93)};
      if (lattice_margin(8, 8, p) < 1e-3) continue;
      ++checked;
      const double h = 1e-5;
      const SampleGradient d = bilinear_sample_grad(g, p);
      const auto xp = bilinear_sample(g, {p.x + h, p.y}), xm = bilinear_sample(g, {p.x - h, p.y});
      const auto yp = bilinear_sample(g, {p.x, p.y + h}), ym = bilinear_sample(g, {p.x, p.y - h});
      for (std::size_t ch = 0; ch < 4; ++ch) {
        const double fx = (xp[ch] - xm[ch]) / (2 * h), fy = (yp[ch] - ym[ch]) / (2 * h);
        EXPECT_LT(std::abs(fx - d.d_dx[ch]) / std::max({std::abs(fx), std::abs(d.d_dx[ch]), 1e-3}), 1e-6);
        EXPECT_LT(std::abs(fy - d.d_dy[ch]) / std::max({std::abs(fy), std::abs(d.d_dy[ch]), 1e-3}), 1e-6);
      }
    }
  }
}

TEST(BilinearGrad, DataGradientIsTapWeights) {
  Rng rng = make_rng(6);
  const FeatureGrid g = random_grid(rng, 5, 5, 1);
  const SamplePoint p{0.37, 0.61};
  const SampleGradient d = bilinear_sample_grad(g, p);
  double recon = 0.0;
  for (const SampleTap& t : d.taps)
    if (t.in_bounds) recon += t.weight * g.at(static_cast<std::size_t>(t.row), static_cast<std::size_t>(t.col), 0);
  EXPECT_NEAR(recon, bilinear_sample(g, p)[0], 1e-14);
}

TEST(BilinearGrad, KinkIsBracketedByOneSidedDifferences) {
  Rng rng = make_rng(7);
  const FeatureGrid g = random_grid(rng, 8, 8, 1);
  const SamplePoint p{g.cell_center(3, 4).x, 0.41};  // x on a column-center lattice line
  const double h = 1e-7;
  const double f0 = bilinear_sample(g, p)[0];
  const double right = (bilinear_sample(g, {p.x + h, p.y})[0] - f0) / h;
  const double left = (f0 - bilinear_sample(g, {p.x - h, p.y})[0]) / h;
  const double analytic = bilinear_sample_grad(g, p).d_dx[0];
  EXPECT_GE(analytic, std::min(left, right) - 1e-5);
  EXPECT_LE(analytic, std::max(left, right) + 1e-5);
}
