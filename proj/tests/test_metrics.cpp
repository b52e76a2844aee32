#include <gtest/gtest.h>

#include <cmath>

#include "topobda/metrics.hpp"
#include "topobda/scene.hpp"

using namespace topobda;

namespace {

Polyline straight(double x0, double y0, double x1, double y1, std::size_t n = 11) {
  std::vector<Point3> pts;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n - 1);
    pts.push_back({x0 + t * (x1 - x0), y0 + t * (y1 - y0), 0.0});
  }
  return Polyline(pts);
}

Polyline random_polyline(Rng& rng) {
  std::vector<Point3> pts;
  Point3 p{uniform(rng, 0, 20), uniform(rng, 0, 20), uniform(rng, -1, 1)};
  for (int i = 0; i < 6; ++i) {
    pts.push_back(p);
    p = p + Point3{uniform(rng, 0.5, 3), uniform(rng, -2, 2), uniform(rng, -0.2, 0.2)};
  }
  return resample_polyline(Polyline(pts), kDefaultResample);
}

}  // namespace

TEST(Resample, UniformArcLengthAndEndpoints) {
  const Polyline p({{0, 0, 0}, {1, 0, 0}, {1, 3, 0}});
  const Polyline r = resample_polyline(p, 5);
  ASSERT_EQ(r.size(), 5u);
  EXPECT_EQ(r.front(), p.front());
  EXPECT_NEAR(distance(r.back(), p.back()), 0.0, 1e-12);
  EXPECT_NEAR(distance(r[1], Point3{1, 0, 0}), 0.0, 1e-12);
  EXPECT_NEAR(distance(r[2], Point3{1, 1, 0}), 0.0, 1e-12);
  EXPECT_THROW(resample_polyline(p, 1), DomainError);
}

TEST(Frechet, Examples) {
  const Polyline a = straight(0, 0, 10, 0);
  EXPECT_EQ(frechet_distance(a, a), 0.0);
  EXPECT_NEAR(frechet_distance(a, straight(0, 2, 10, 2)), 2.0, 1e-12);
  EXPECT_NEAR(frechet_distance(a, a.reversed()), 10.0, 1e-12);
}

TEST(Chamfer, Examples) {
  const Polyline a = straight(0, 0, 10, 0);
  EXPECT_EQ(chamfer_distance(a, a), 0.0);
  EXPECT_EQ(chamfer_distance(a, a.reversed()), 0.0);
  EXPECT_NEAR(chamfer_distance(a, straight(0, 1, 10, 1)), 1.0, 1e-12);
}

TEST(Distances, Axioms) {
  Rng rng = make_rng(1);
  for (int rep = 0; rep < 200; ++rep) {
    const Polyline a = random_polyline(rng), b = random_polyline(rng);
    EXPECT_EQ(frechet_distance(a, b), frechet_distance(b, a));
    EXPECT_NEAR(chamfer_distance(a, b), chamfer_distance(b, a), 1e-12);
    EXPECT_EQ(frechet_distance(a, a), 0.0);
    EXPECT_EQ(chamfer_distance(a, a), 0.0);
    EXPECT_GT(frechet_distance(a, b), 0.0);
    EXPECT_NEAR(chamfer_distance(a, b.reversed()), chamfer_distance(a, b), 1e-12);
    EXPECT_GE(frechet_distance(a, b) + 1e-12, chamfer_distance(a, b));
  }
}

TEST(AveragePrecision, Ladder) {
  const std::vector<char> tp = {0, 1, 1};
  EXPECT_NEAR(average_precision(tp, 3), 4.0 / 9.0, 1e-15);
  EXPECT_EQ(average_precision({}, 0), 1.0);
  const std::vector<char> one = {0};
  EXPECT_EQ(average_precision(one, 0), 0.0);
}

TEST(DetectionAp, IdenticalPredictionsScoreFull) {
  const std::vector<Polyline> gts = {straight(0, 0, 10, 0), straight(0, 5, 10, 5), straight(0, 10, 10, 12)};
  const std::vector<double> scores = {0.2, 0.9, 0.5};
  std::vector<ThresholdAp> per;
  EXPECT_EQ(detection_ap(gts, scores, gts, DistanceKind::frechet, kFrechetThresholds, &per), 100.0);
  for (const ThresholdAp& t : per) EXPECT_EQ(t.ap, 100.0);
  EXPECT_EQ(detection_ap(gts, scores, gts, DistanceKind::chamfer, kChamferThresholds), 100.0);
}

TEST(DetectionAp, NoPredictions) {
  const std::vector<Polyline> gts = {straight(0, 0, 10, 0)};
  EXPECT_EQ(detection_ap({}, {}, gts, DistanceKind::frechet, kFrechetThresholds), 0.0);
  EXPECT_EQ(detection_ap({}, {}, {}, DistanceKind::frechet, kFrechetThresholds), 100.0);
}

TEST(DetectionAp, FarPredictionRankedFirst) {
  const std::vector<Polyline> gts = {straight(0, 0, 10, 0), straight(0, 5, 10, 5), straight(0, 10, 10, 10)};
  const std::vector<Polyline> preds = {straight(30, 30, 40, 30), gts[0], gts[1]};
  const std::vector<double> scores = {0.9, 0.8, 0.7};
  EXPECT_NEAR(detection_ap(preds, scores, gts, DistanceKind::frechet, kFrechetThresholds), 400.0 / 9.0, 1e-12);
}

TEST(DetectionAp, ThresholdMonotone) {
  Rng rng = make_rng(2);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<Polyline> gts, preds;
    std::vector<double> scores;
    for (int i = 0; i < 5; ++i) {
      gts.push_back(random_polyline(rng));
      std::vector<Point3> pts = gts.back().points();
      const Point3 shift{uniform(rng, -2, 2), uniform(rng, -2, 2), 0};
      for (Point3& p : pts) p = p + shift;
      preds.emplace_back(pts);
      scores.push_back(uniform(rng, 0, 1));
    }
    double prev = -1.0;
    for (double thr : {0.5, 1.0, 1.5, 2.0, 3.0}) {
      const std::vector<double> t = {thr};
      const double ap = detection_ap(preds, scores, gts, DistanceKind::frechet, t);
      EXPECT_GE(ap, prev);
      prev = ap;
    }
  }
}

TEST(TopologyAp, PerfectAndEmpty) {
  const std::vector<std::uint8_t> gt_adj = {0, 1, 0, 0, 0, 1, 0, 0, 0};
  const std::vector<long> ident = {0, 1, 2};
  Matrix perfect(3, 3, 0.0);
  perfect(0, 1) = perfect(1, 2) = 1.0;
  EXPECT_EQ(topology_ap_single(perfect, gt_adj, 3, ident), 100.0);
  EXPECT_EQ(topology_ap_single(Matrix(3, 3, 0.0), gt_adj, 3, ident), 0.0);
}

TEST(TopologyAp, WrongEdgeOutranksRightEdge) {
  std::vector<std::uint8_t> gt_adj(16, 0);
  gt_adj[0 * 4 + 1] = gt_adj[1 * 4 + 2] = gt_adj[2 * 4 + 3] = 1;
  Matrix pred(4, 4, 0.0);
  pred(0, 2) = 0.9;
  pred(0, 1) = 0.8;
  pred(1, 2) = 0.7;
  const std::vector<long> ident = {0, 1, 2, 3};
  EXPECT_NEAR(topology_ap_single(pred, gt_adj, 4, ident), 400.0 / 9.0, 1e-12);
}

TEST(TopologyAp, UnmatchedEndpointIsFalsePositive) {
  const std::vector<std::uint8_t> gt_adj = {0, 1, 0, 0};
  Matrix pred(2, 2, 0.0);
  pred(0, 1) = 1.0;
  const std::vector<long> half = {0, -1};
  EXPECT_EQ(topology_ap_single(pred, gt_adj, 2, half), 0.0);
}

TEST(TopologyAp, V11mRemapOnlyReorders) {
  EXPECT_EQ(v11m_remap(0.04), 0.04);
  EXPECT_EQ(v11m_remap(0.5), 1.5);
  std::vector<std::uint8_t> gt_adj(9, 0);
  gt_adj[1] = 1;
  Matrix pred(3, 3, 0.0);
  pred(0, 1) = 0.3;
  pred(1, 2) = 0.2;
  const std::vector<long> ident = {0, 1, 2};
  EXPECT_EQ(topology_ap_single(pred, gt_adj, 3, ident, false), topology_ap_single(pred, gt_adj, 3, ident, true));
}

TEST(OlsL, PublishedRows) {
  EXPECT_NEAR(ols_l(40.8, 45.8, 32.9), 48.0, 0.05);
  EXPECT_NEAR(ols_l(34.5, 38.4, 25.1), 41.0, 0.05);
  EXPECT_NEAR(ols_l(38.9, 39.2, 29.4), 44.1, 0.05);
  EXPECT_EQ(ols_l(100, 100, 100), 100.0);
  EXPECT_THROW(ols_l(101, 0, 0), DomainError);
  EXPECT_THROW(ols_l(0, -1, 0), DomainError);
}

TEST(Evaluate, GroundTruthAgainstItself) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = generate_scene(seed, 5, 3);
    std::vector<Polyline> polys;
    for (const GtInstance& g : s.gt.instances) polys.push_back(to_metric(sample_curve(g.ctrl, 20), s.grid));
    Matrix adj(polys.size(), polys.size(), 0.0);
    for (std::size_t i = 0; i < polys.size(); ++i)
      for (std::size_t j = 0; j < polys.size(); ++j) adj(i, j) = s.gt.edge(i, j) ? 1.0 : 0.0;
    const std::vector<double> scores(polys.size(), 1.0);
    const MetricReport r = evaluate(polys, scores, adj, polys, s.gt.adjacency);
    EXPECT_EQ(r.det_l, 100.0);
    EXPECT_EQ(r.det_l_ch, 100.0);
    EXPECT_EQ(r.top_ll, 100.0);
    EXPECT_EQ(r.ols_l, 100.0);
    EXPECT_EQ(r.per_threshold_ap.size(), 6u);
  }
}
