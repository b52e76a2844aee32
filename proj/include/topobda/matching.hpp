#pragma once

// Bipartite assignment between predicted and ground-truth centerlines under the
// Mask-L1 mix cost:
//   cost(i, j) = l_reg * |C_i - G_j|_1 + l_bce * BCE(i, j) + l_dice * (1 - dice(i, j)) - l_cls * p_i(label_j)

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "topobda/decoder.hpp"
#include "topobda/dense.hpp"
#include "topobda/error.hpp"
#include "topobda/ground_truth.hpp"
#include "topobda/mask_sampling.hpp"

namespace topobda {

struct MatchCost {
  double lambda_reg = 5.0;
  double lambda_mask_bce = 5.0;
  double lambda_mask_dice = 5.0;
  double lambda_cls = 2.0;

  void validate() const {
    const double w[] = {lambda_reg, lambda_mask_bce, lambda_mask_dice, lambda_cls};
    bool any = false;
    for (double x : w) {
      if (!(x >= 0.0)) throw DomainError("MatchCost: weights must be non-negative");
      any = any || x > 0.0;
    }
    if (!any) throw DomainError("MatchCost: at least one weight must be positive");
  }
};

struct MaskCostOptions {
  std::size_t sample_count = 100;
  std::uint64_t seed = 0;
  bool dense = false;  ///< evaluate at every cell center instead of sampled points
};

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  ///< (prediction, gt), sorted by prediction
  double total_cost = 0.0;
};

/// Minimum-cost one-to-one assignment of min(n, m) pairs (Kuhn-Munkres, O(s^3), s = max(n, m)).
/// Rectangular inputs are padded to square with a cost strictly above every real entry.
inline Assignment hungarian(const Matrix& cost) {
  const std::size_t n = cost.rows(), m = cost.cols();
  Assignment result;
  if (n == 0 || m == 0) return result;
  double largest = -std::numeric_limits<double>::infinity();
  for (double c : cost.data()) {
    if (std::isnan(c)) throw DomainError("hungarian: NaN cost");
    if (!std::isfinite(c)) throw DomainError("hungarian: non-finite cost");
    largest = std::max(largest, c);
  }
  const std::size_t s = std::max(n, m);
  const double pad = largest + 1.0;
  auto a = [&](std::size_t i, std::size_t j) { return (i < n && j < m) ? cost(i, j) : pad; };

  // 1-indexed potentials formulation; p[j] is the row assigned to column j.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(s + 1, 0.0), v(s + 1, 0.0);
  std::vector<std::size_t> p(s + 1, 0), way(s + 1, 0);
  for (std::size_t i = 1; i <= s; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(s + 1, inf);
    std::vector<char> used(s + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= s; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= s; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(s, 0);
  for (std::size_t j = 1; j <= s; ++j) row_to_col[p[j] - 1] = j - 1;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = row_to_col[i];
    if (j < m) result.pairs.emplace_back(i, j);
  }
  for (const auto& [i, j] : result.pairs) result.total_cost += cost(i, j);
  return result;
}

/// Sum of the cost entries selected by `pairs`, accumulated in pair order.
inline double assignment_cost(const Matrix& cost, std::span<const std::pair<std::size_t, std::size_t>> pairs) {
  double total = 0.0;
  for (const auto& [i, j] : pairs) total += cost(i, j);
  return total;
}

inline double l1_distance(const ControlPointSet& a, const ControlPointSet& b) {
  if (a.size() != b.size()) throw ShapeError("l1_distance: control point counts differ");
  double s = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n)
    for (std::size_t d = 0; d < 3; ++d) s += std::abs(a[n][d] - b[n][d]);
  return s;
}

/// Predictions [begin, begin + count) of `state` against every GT instance.
inline Matrix pairwise_cost(const QueryState& state, std::size_t begin, std::size_t count, const GroundTruth& gt,
                            const MatchCost& weights, const MaskCostOptions& mask_opts = {}) {
  weights.validate();
  if (begin + count > state.n_queries) throw ShapeError("pairwise_cost: prediction slice out of range");
  if (gt.height != state.height || gt.width != state.width) throw ShapeError("pairwise_cost: GT mask size != grid");
  for (const GtInstance& g : gt.instances)
    if (g.ctrl.size() != state.n_ctrl) throw ShapeError("pairwise_cost: GT control point count != prediction");
  const std::size_t H = state.height, W = state.width, n_gt = gt.size();
  Matrix cost(count, n_gt, 0.0);
  if (n_gt == 0 || count == 0) return cost;

  const bool use_mask = weights.lambda_mask_bce > 0.0 || weights.lambda_mask_dice > 0.0;
  std::vector<SamplePoint> pts;
  std::vector<std::vector<double>> gt_values;
  if (use_mask) {
    pts = mask_opts.dense ? dense_mask_points(H, W) : sample_mask_points(mask_opts.sample_count, H, W, mask_opts.seed);
    for (const GtInstance& g : gt.instances)
      gt_values.push_back(read_map_at(std::span<const std::uint8_t>(g.mask), H, W, pts));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t q = begin + i;
    const ControlPointSet ctrl = state.control_points(q);
    const std::vector<double> probs = state.class_probabilities(q);
    std::vector<double> pred_values;
    if (use_mask) {
      const std::vector<double> prob_map = state.mask_probability(q);
      pred_values = read_map_at(std::span<const double>(prob_map), H, W, pts);
    }
    for (std::size_t j = 0; j < n_gt; ++j) {
      double c = weights.lambda_reg * l1_distance(ctrl, gt.instances[j].ctrl);
      if (use_mask) {
        const MaskTerms t = mask_terms(pred_values, gt_values[j]);
        c += weights.lambda_mask_bce * t.bce + weights.lambda_mask_dice * t.dice_loss;
      }
      c -= weights.lambda_cls * probs[static_cast<std::size_t>(gt.instances[j].label)];
      cost(i, j) = c;
    }
  }
  return cost;
}

inline Assignment match(const QueryState& state, std::size_t begin, std::size_t count, const GroundTruth& gt,
                        const MatchCost& weights, const MaskCostOptions& mask_opts = {}) {
  return hungarian(pairwise_cost(state, begin, count, gt, weights, mask_opts));
}

/// s_i = g_(i mod n) for i < n * R; adjacency is not carried over.
inline GroundTruth repeat_ground_truth(const GroundTruth& gt, std::size_t repetitions) {
  GroundTruth out;
  out.height = gt.height;
  out.width = gt.width;
  const std::size_t n = gt.size();
  for (std::size_t i = 0; i < n * repetitions; ++i) out.instances.push_back(gt.instances[i % n]);
  out.adjacency.assign(out.instances.size() * out.instances.size(), 0);
  return out;
}

/// Matches predictions [begin, begin + count) against the GT set repeated R times.
/// GT indices of the result refer to the repeated set; original index = j mod n.
inline Assignment match_with_repetition(const QueryState& state, std::size_t begin, std::size_t count,
                                        const GroundTruth& gt, const MatchCost& weights, std::size_t repetitions,
                                        const MaskCostOptions& mask_opts = {}) {
  if (repetitions < 1) throw DomainError("match_with_repetition: R must be >= 1");
  return match(state, begin, count, repeat_ground_truth(gt, repetitions), weights, mask_opts);
}

}  // namespace topobda
