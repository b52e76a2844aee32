#pragma once

// Centerline detection and topology metrics on metric-space polylines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "topobda/bezier.hpp"
#include "topobda/dense.hpp"
#include "topobda/error.hpp"

namespace topobda {

inline constexpr std::size_t kDefaultResample = 11;
inline const std::vector<double> kFrechetThresholds = {1.0, 2.0, 3.0};
inline const std::vector<double> kChamferThresholds = {0.5, 1.0, 1.5};

/// `count` points spaced uniformly in arc length, endpoints included.
inline Polyline resample_polyline(const Polyline& poly, std::size_t count) {
  if (count < 2) throw DomainError("resample_polyline: count must be >= 2");
  const auto& pts = poly.points();
  std::vector<double> cum(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i) cum[i] = cum[i - 1] + distance(pts[i - 1], pts[i]);
  const double total = cum.back();
  std::vector<Point3> out(count);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < count; ++k) {
    if (k == 0) {
      out[k] = pts.front();
      continue;
    }
    if (k + 1 == count) {
      out[k] = pts.back();
      continue;
    }
    const double s = total * static_cast<double>(k) / static_cast<double>(count - 1);
    while (seg + 2 < pts.size() && cum[seg + 1] < s) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double t = len > 0.0 ? std::clamp((s - cum[seg]) / len, 0.0, 1.0) : 0.0;
    out[k] = pts[seg] + t * (pts[seg + 1] - pts[seg]);
  }
  return Polyline(std::move(out));
}

/// Discrete Frechet distance over the coupling lattice.
inline double frechet_distance(const Polyline& a, const Polyline& b) {
  const auto& p = a.points();
  const auto& q = b.points();
  const std::size_t n = p.size(), m = q.size();
  std::vector<double> ca(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double d = distance(p[i], q[j]);
      double prev;
      if (i == 0 && j == 0) prev = 0.0;
      else if (i == 0) prev = ca[j - 1];
      else if (j == 0) prev = ca[(i - 1) * m];
      else prev = std::min({ca[(i - 1) * m + j], ca[(i - 1) * m + j - 1], ca[i * m + j - 1]});
      ca[i * m + j] = std::max(prev, d);
    }
  return ca.back();
}

namespace detail {
inline double mean_nearest(const std::vector<Point3>& from, const std::vector<Point3>& to) {
  double s = 0.0;
  for (const Point3& x : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const Point3& y : to) best = std::min(best, distance(x, y));
    s += best;
  }
  return s / static_cast<double>(from.size());
}
}  // namespace detail

/// Average of the two directional mean nearest-point distances.
inline double chamfer_distance(const Polyline& a, const Polyline& b) {
  return 0.5 * (detail::mean_nearest(a.points(), b.points()) + detail::mean_nearest(b.points(), a.points()));
}

enum class DistanceKind { frechet, chamfer };

inline double polyline_distance(DistanceKind kind, const Polyline& a, const Polyline& b) {
  return kind == DistanceKind::frechet ? frechet_distance(a, b) : chamfer_distance(a, b);
}

/// All-point interpolated AP in [0, 1] from TP flags in descending-confidence order.
inline double average_precision(std::span<const char> is_tp, std::size_t n_positive) {
  if (n_positive == 0) return is_tp.empty() ? 1.0 : 0.0;
  const std::size_t n = is_tp.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t k = 0; k < n; ++k) {
    tp += is_tp[k] ? 1 : 0;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    recall[k] = static_cast<double>(tp) / static_cast<double>(n_positive);
  }
  for (std::size_t k = n; k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

/// Indices sorted by descending score; ties keep index order.
inline std::vector<std::size_t> rank_by_score(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

/// Pairwise distances, preds x gts.
inline Matrix distance_matrix(std::span<const Polyline> preds, std::span<const Polyline> gts, DistanceKind kind) {
  Matrix d(preds.size(), gts.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < gts.size(); ++j) d(i, j) = polyline_distance(kind, preds[i], gts[j]);
  return d;
}

struct DetectionMatch {
  std::vector<char> is_tp;       ///< in ranked order
  std::vector<long> pred_to_gt;  ///< per prediction, -1 if unmatched
};

/// Greedy matching in descending confidence: each prediction claims its nearest unmatched GT
/// if that distance is within the threshold.
inline DetectionMatch greedy_match(const Matrix& dist, std::span<const double> scores, double threshold) {
  DetectionMatch out;
  out.pred_to_gt.assign(dist.rows(), -1);
  std::vector<char> claimed(dist.cols(), 0);
  for (std::size_t i : rank_by_score(scores)) {
    long best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < dist.cols(); ++j)
      if (!claimed[j] && dist(i, j) < best_d) {
        best_d = dist(i, j);
        best = static_cast<long>(j);
      }
    const bool tp = best >= 0 && best_d <= threshold;
    if (tp) {
      claimed[static_cast<std::size_t>(best)] = 1;
      out.pred_to_gt[i] = best;
    }
    out.is_tp.push_back(tp ? 1 : 0);
  }
  return out;
}

struct ThresholdAp {
  std::string criterion;  ///< "frechet" or "chamfer"
  double threshold = 0.0;
  double ap = 0.0;        ///< percent
};

/// Mean AP in percent over thresholds; inputs are expected already resampled.
inline double detection_ap(std::span<const Polyline> preds, std::span<const double> scores,
                           std::span<const Polyline> gts, DistanceKind kind, std::span<const double> thresholds,
                           std::vector<ThresholdAp>* per_threshold = nullptr) {
  if (preds.size() != scores.size()) throw ShapeError("detection_ap: one score per prediction required");
  if (thresholds.empty()) throw DomainError("detection_ap: no thresholds");
  const Matrix dist = distance_matrix(preds, gts, kind);
  double sum = 0.0;
  for (double thr : thresholds) {
    const DetectionMatch m = greedy_match(dist, scores, thr);
    const double ap = 100.0 * average_precision(m.is_tp, gts.size());
    if (per_threshold)
      per_threshold->push_back({kind == DistanceKind::frechet ? "frechet" : "chamfer", thr, ap});
    sum += ap;
  }
  return sum / static_cast<double>(thresholds.size());
}

/// Literal reading of the V1.1m remap: s + 1 * [s > 0.05].
inline double v11m_remap(double score) { return score + (score > 0.05 ? 1.0 : 0.0); }

/// TOP score in percent for one vertex matching. pred_adj: n_pred x n_pred edge confidences,
/// gt_adj: n_gt x n_gt binary. Only edges with confidence > 0 are predictions; an edge is a TP
/// iff both endpoints are matched and the matched GT pair is an unclaimed GT edge.
inline double topology_ap_single(const Matrix& pred_adj, std::span<const std::uint8_t> gt_adj, std::size_t n_gt,
                                 std::span<const long> pred_to_gt, bool v11m = false) {
  const std::size_t n = pred_adj.rows();
  if (pred_adj.cols() != n || pred_to_gt.size() != n) throw ShapeError("topology_ap: prediction adjacency shape");
  if (gt_adj.size() != n_gt * n_gt) throw ShapeError("topology_ap: GT adjacency shape");
  std::size_t n_gt_edges = 0;
  for (std::uint8_t e : gt_adj) n_gt_edges += e ? 1 : 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<double> scores;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && pred_adj(i, j) > 0.0) {
        edges.emplace_back(i, j);
        scores.push_back(v11m ? v11m_remap(pred_adj(i, j)) : pred_adj(i, j));
      }
  std::vector<char> claimed(n_gt * n_gt, 0);
  std::vector<char> is_tp;
  for (std::size_t k : rank_by_score(scores)) {
    const auto [i, j] = edges[k];
    bool tp = false;
    if (pred_to_gt[i] >= 0 && pred_to_gt[j] >= 0) {
      const std::size_t gi = static_cast<std::size_t>(pred_to_gt[i]), gj = static_cast<std::size_t>(pred_to_gt[j]);
      const std::size_t idx = gi * n_gt + gj;
      if (gt_adj[idx] && !claimed[idx]) {
        claimed[idx] = 1;
        tp = true;
      }
    }
    is_tp.push_back(tp ? 1 : 0);
  }
  return 100.0 * average_precision(is_tp, n_gt_edges);
}

/// TOP_ll: topology AP averaged over the Frechet thresholds, vertex matching from detection at
/// each threshold.
inline double topology_ap(std::span<const Polyline> preds, std::span<const double> scores, const Matrix& pred_adj,
                          std::span<const Polyline> gts, std::span<const std::uint8_t> gt_adj,
                          std::span<const double> thresholds, bool v11m = false) {
  if (thresholds.empty()) throw DomainError("topology_ap: no thresholds");
  const Matrix dist = distance_matrix(preds, gts, DistanceKind::frechet);
  double sum = 0.0;
  for (double thr : thresholds) {
    const DetectionMatch m = greedy_match(dist, scores, thr);
    sum += topology_ap_single(pred_adj, gt_adj, gts.size(), m.pred_to_gt, v11m);
  }
  return sum / static_cast<double>(thresholds.size());
}

inline double ols_l(double det_l, double det_l_ch, double top_ll) {
  for (double v : {det_l, det_l_ch, top_ll})
    if (!(v >= 0.0 && v <= 100.0)) throw DomainError("ols_l: inputs must lie in [0, 100]");
  return 100.0 * (det_l / 100.0 + det_l_ch / 100.0 + std::sqrt(top_ll / 100.0)) / 3.0;
}

struct MetricReport {
  double det_l = 0.0;
  double det_l_ch = 0.0;
  double top_ll = 0.0;
  double ols_l = 0.0;
  std::vector<ThresholdAp> per_threshold_ap;
};

struct EvalOptions {
  std::size_t resample = kDefaultResample;
  bool v11m = false;
};

/// Polylines are in meters. pred_adj: n_pred x n_pred confidences; gt_adj: n_gt x n_gt binary.
inline MetricReport evaluate(std::span<const Polyline> preds, std::span<const double> scores, const Matrix& pred_adj,
                             std::span<const Polyline> gts, std::span<const std::uint8_t> gt_adj,
                             const EvalOptions& opts = {}) {
  std::vector<Polyline> rp, rg;
  for (const Polyline& p : preds) rp.push_back(resample_polyline(p, opts.resample));
  for (const Polyline& g : gts) rg.push_back(resample_polyline(g, opts.resample));
  MetricReport r;
  r.det_l = detection_ap(rp, scores, rg, DistanceKind::frechet, kFrechetThresholds, &r.per_threshold_ap);
  r.det_l_ch = detection_ap(rp, scores, rg, DistanceKind::chamfer, kChamferThresholds, &r.per_threshold_ap);
  r.top_ll = topology_ap(rp, scores, pred_adj, rg, gt_adj, kFrechetThresholds, opts.v11m);
  r.ols_l = ols_l(r.det_l, r.det_l_ch, r.top_ll);
  return r;
}

}  // namespace topobda
