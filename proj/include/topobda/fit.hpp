#pragma once

// Direct optimization of free control points against a scene's GT under Hungarian-matched
// lambda_reg * L_reg. Each iteration re-matches, then takes a proximal step on the L1 term:
//   c <- g + sign(c - g) * max(|c - g| - step * lambda_reg / n_pairs, 0)
// which is the exact minimizer of the linearized step for a fixed matching and, unlike a plain
// subgradient step, does not oscillate around the target at the step-size scale.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "topobda/bezier.hpp"
#include "topobda/dense.hpp"
#include "topobda/error.hpp"
#include "topobda/ground_truth.hpp"
#include "topobda/losses.hpp"
#include "topobda/matching.hpp"

namespace topobda {

struct FitOptions {
  std::size_t iterations = 500;
  double step_size = 0.01;
  double lambda_reg = 3.0;
};

struct FitResult {
  std::vector<ControlPointSet> ctrl;
  std::vector<double> loss_trace;  ///< lambda_reg * L_reg before each step, then the final value
  Assignment initial_assignment;
  Assignment final_assignment;
};

/// Mean absolute per-coordinate error of matched pairs.
inline double mean_coordinate_error(std::span<const ControlPointSet> pred, std::span<const ControlPointSet> gt,
                                    const Assignment& a) {
  if (a.pairs.empty()) return 0.0;
  double s = 0.0;
  std::size_t count = 0;
  for (const auto& [i, j] : a.pairs) {
    s += l1_distance(pred[i], gt[j]);
    count += pred[i].size() * 3;
  }
  return s / static_cast<double>(count);
}

namespace detail {
inline Matrix l1_cost_matrix(std::span<const ControlPointSet> pred, std::span<const ControlPointSet> gt) {
  Matrix c(pred.size(), gt.size());
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = 0; j < gt.size(); ++j) c(i, j) = l1_distance(pred[i], gt[j]);
  return c;
}
}  // namespace detail

inline FitResult fit_demo(const GroundTruth& gt, std::vector<ControlPointSet> init, const FitOptions& opts = {}) {
  if (gt.size() == 0) throw DomainError("fit_demo: scene has no GT instances");
  if (init.empty()) throw DomainError("fit_demo: no initial control points");
  if (!(opts.step_size > 0.0) || !(opts.lambda_reg >= 0.0)) throw DomainError("fit_demo: bad step or weight");
  std::vector<ControlPointSet> target;
  for (const GtInstance& g : gt.instances) target.push_back(g.ctrl);

  FitResult r;
  std::vector<std::vector<Point3>> x;
  for (const ControlPointSet& c : init) x.push_back(c.points());
  auto current = [&] {
    std::vector<ControlPointSet> out;
    for (const auto& pts : x) out.emplace_back(pts);
    return out;
  };

  for (std::size_t it = 0; it <= opts.iterations; ++it) {
    const std::vector<ControlPointSet> pred = current();
    const Matrix cost = detail::l1_cost_matrix(pred, target);
    Assignment a = hungarian(cost);
    const double loss = opts.lambda_reg * l1_regression_loss(pred, target, a);
    if (std::isnan(loss)) throw NumericError("fit_demo: loss is NaN", it);
    r.loss_trace.push_back(loss);
    if (it == 0) r.initial_assignment = a;
    r.final_assignment = a;
    if (it == opts.iterations) break;
    const double shrink = opts.step_size * opts.lambda_reg / static_cast<double>(a.pairs.size());
    for (const auto& [i, j] : a.pairs)
      for (std::size_t n = 0; n < x[i].size(); ++n)
        for (std::size_t d = 0; d < 3; ++d) {
          const double diff = x[i][n][d] - target[j][n][d];
          x[i][n][d] = target[j][n][d] + std::copysign(std::max(std::abs(diff) - shrink, 0.0), diff);
        }
  }
  r.ctrl = current();
  return r;
}

/// GT control points shifted by `offset` in every coordinate.
inline std::vector<ControlPointSet> perturbed_init(const GroundTruth& gt, double offset) {
  std::vector<ControlPointSet> out;
  for (const GtInstance& g : gt.instances) {
    std::vector<Point3> pts = g.ctrl.points();
    for (Point3& p : pts) p = p + Point3{offset, offset, offset};
    out.emplace_back(std::move(pts));
  }
  return out;
}

}  // namespace topobda
