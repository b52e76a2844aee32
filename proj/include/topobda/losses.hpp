#pragma once

// Centerline-branch training losses. Each prediction block is matched against its GT set
// with the Mask-L1 mix matcher, then
//   L = l_reg * L_reg + l_bce * BCE + l_dice * (1 - dice) + l_cls * L_cls
// is evaluated on the matched pairs. Deep supervision sums L over every decoder state, and the
// one-to-many block adds l_o2m times the same quantity against the GT repeated R times.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "topobda/decoder.hpp"
#include "topobda/error.hpp"
#include "topobda/ground_truth.hpp"
#include "topobda/mask_sampling.hpp"
#include "topobda/matching.hpp"
#include "topobda/random.hpp"

namespace topobda {

inline constexpr double kMatchedClassWeight = 0.1;

struct LossWeights {
  double lambda_reg = 3.0;
  double lambda_mask_bce = 5.0;
  double lambda_mask_dice = 5.0;
  double lambda_cls = 2.0;
  double lambda_one_to_many = 1.0;

  void validate() const {
    for (double w : {lambda_reg, lambda_mask_bce, lambda_mask_dice, lambda_cls, lambda_one_to_many})
      if (!(w >= 0.0)) throw DomainError("LossWeights: weights must be non-negative");
  }
};

struct LossOptions {
  std::size_t sample_count = 100;
  std::uint64_t seed = 0;
  bool dense_mask_cost = false;
  MatchCost match_cost{};
};

// ---------------------------------------------------------------------------------------
// L_reg

/// Mean over matched pairs of the L1 distance between control point sets.
inline double l1_regression_loss(std::span<const ControlPointSet> pred, std::span<const ControlPointSet> gt,
                                 const Assignment& assignment) {
  if (gt.empty() || assignment.pairs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [i, j] : assignment.pairs) {
    if (i >= pred.size() || j >= gt.size()) throw ShapeError("l1_regression_loss: assignment index out of range");
    s += l1_distance(pred[i], gt[j]);
  }
  return s / static_cast<double>(assignment.pairs.size());
}

/// d L_reg / d pred, one gradient set per prediction (zero for unmatched ones). Subgradient 0 at ties.
inline std::vector<std::vector<Point3>> l1_regression_grad(std::span<const ControlPointSet> pred,
                                                           std::span<const ControlPointSet> gt,
                                                           const Assignment& assignment) {
  std::vector<std::vector<Point3>> g(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) g[i].assign(pred[i].size(), Point3{});
  if (gt.empty() || assignment.pairs.empty()) return g;
  const double scale = 1.0 / static_cast<double>(assignment.pairs.size());
  for (const auto& [i, j] : assignment.pairs)
    for (std::size_t n = 0; n < pred[i].size(); ++n)
      for (std::size_t d = 0; d < 3; ++d) {
        const double diff = pred[i][n][d] - gt[j][n][d];
        g[i][n][d] = diff > 0.0 ? scale : (diff < 0.0 ? -scale : 0.0);
      }
  return g;
}

// ---------------------------------------------------------------------------------------
// L_mask

/// Mean over matched pairs of the point-sampled BCE and dice-loss terms.
/// prob_maps[i] and gt_masks[j] are H x W row-major.
inline MaskTerms mask_loss(std::span<const std::vector<double>> prob_maps,
                           std::span<const std::vector<std::uint8_t>> gt_masks, std::size_t height,
                           std::size_t width, const Assignment& assignment, std::span<const SamplePoint> pts) {
  if (pts.empty()) throw DomainError("mask_loss: sample count must be >= 1");
  MaskTerms acc;
  if (assignment.pairs.empty()) return acc;
  for (const auto& [i, j] : assignment.pairs) {
    if (prob_maps[i].size() != height * width || gt_masks[j].size() != height * width)
      throw ShapeError("mask_loss: map size != grid size");
    const auto p = read_map_at(std::span<const double>(prob_maps[i]), height, width, pts);
    const auto g = read_map_at(std::span<const std::uint8_t>(gt_masks[j]), height, width, pts);
    const MaskTerms t = mask_terms(p, g);
    acc.bce += t.bce;
    acc.dice_loss += t.dice_loss;
  }
  const double n = static_cast<double>(assignment.pairs.size());
  acc.bce /= n;
  acc.dice_loss /= n;
  return acc;
}

inline MaskTerms mask_loss(std::span<const std::vector<double>> prob_maps,
                           std::span<const std::vector<std::uint8_t>> gt_masks, std::size_t height,
                           std::size_t width, const Assignment& assignment, std::size_t sample_count,
                           std::uint64_t seed) {
  if (sample_count < 1) throw DomainError("mask_loss: sample count must be >= 1");
  const auto pts = sample_mask_points(sample_count, height, width, seed);
  return mask_loss(prob_maps, gt_masks, height, width, assignment, pts);
}

/// Gradient of the mean sampled BCE of one pair w.r.t. the pre-mask logits (H x W).
inline std::vector<double> mask_bce_grad_logits(std::span<const double> logits, std::span<const std::uint8_t> gt_mask,
                                                std::size_t height, std::size_t width,
                                                std::span<const SamplePoint> pts) {
  const std::size_t cells = height * width;
  if (logits.size() != cells || gt_mask.size() != cells) throw ShapeError("mask_bce_grad_logits: size mismatch");
  std::vector<double> prob(cells);
  for (std::size_t c = 0; c < cells; ++c) prob[c] = sigmoid(logits[c]);
  std::vector<double> grad(cells, 0.0);
  const double inv_k = 1.0 / static_cast<double>(pts.size());
  for (const SamplePoint& pt : pts) {
    const BilinearStencil s = bilinear_stencil(height, width, pt);
    double p = 0.0, g = 0.0;
    for (const SampleTap& t : s.taps)
      if (t.in_bounds) {
        const std::size_t idx = static_cast<std::size_t>(t.row) * width + t.col;
        p += t.weight * prob[idx];
        g += t.weight * gt_mask[idx];
      }
    if (p <= kProbEps || p >= 1.0 - kProbEps) continue;  // clamped region, derivative 0
    const double dl_dp = inv_k * (p - g) / (p * (1.0 - p));
    for (const SampleTap& t : s.taps)
      if (t.in_bounds) {
        const std::size_t idx = static_cast<std::size_t>(t.row) * width + t.col;
        grad[idx] += dl_dp * t.weight * prob[idx] * (1.0 - prob[idx]);
      }
  }
  return grad;
}

// ---------------------------------------------------------------------------------------
// L_cls

/// Softmax cross-entropy averaged over queries. Matched queries target their GT label with
/// weight 0.1; unmatched queries target the no-centerline class with weight 1.
/// logits: n_queries x n_classes; matched_labels[q] < 0 marks an unmatched query.
inline double classification_loss(std::span<const double> logits, std::size_t n_classes,
                                  std::span<const int> matched_labels) {
  const std::size_t Q = matched_labels.size();
  if (logits.size() != Q * n_classes) throw ShapeError("classification_loss: logits size mismatch");
  if (Q == 0) return 0.0;
  double s = 0.0;
  std::vector<double> p(n_classes);
  for (std::size_t q = 0; q < Q; ++q) {
    const auto l = logits.subspan(q * n_classes, n_classes);
    p.assign(l.begin(), l.end());
    softmax_inplace(p);
    const bool matched = matched_labels[q] >= 0;
    const auto target = static_cast<std::size_t>(matched ? matched_labels[q] : kNoCenterlineClass);
    if (target >= n_classes) throw ShapeError("classification_loss: label out of range");
    s += (matched ? kMatchedClassWeight : 1.0) * -std::log(std::max(p[target], kProbEps));
  }
  return s / static_cast<double>(Q);
}

// ---------------------------------------------------------------------------------------
// Totals

struct LossTerms {
  double reg = 0.0;
  double mask_bce = 0.0;
  double mask_dice = 0.0;
  double cls = 0.0;

  double weighted(const LossWeights& w) const {
    return w.lambda_reg * reg + w.lambda_mask_bce * mask_bce + w.lambda_mask_dice * mask_dice + w.lambda_cls * cls;
  }
};

struct BlockLoss {
  LossTerms terms;
  Assignment assignment;
};

struct LayerLoss {
  BlockLoss one_to_one;
  BlockLoss one_to_many;  // zero when R = 0
  double total = 0.0;
};

struct TotalLoss {
  std::vector<LayerLoss> layers;
  double one_to_one = 0.0;
  double one_to_many = 0.0;
  double total = 0.0;
};

/// Matches predictions [begin, begin + count) against `gt` and evaluates every term on the result.
inline BlockLoss block_loss(const QueryState& state, std::size_t begin, std::size_t count, const GroundTruth& gt,
                            const LossOptions& opts, std::uint64_t seed) {
  BlockLoss out;
  MaskCostOptions mopts{opts.sample_count, seed, opts.dense_mask_cost};
  if (gt.size() > 0) {
    out.assignment = match(state, begin, count, gt, opts.match_cost, mopts);
    std::vector<ControlPointSet> pred, target;
    std::vector<std::vector<double>> probs;
    std::vector<std::vector<std::uint8_t>> masks;
    Assignment local;
    for (std::size_t k = 0; k < out.assignment.pairs.size(); ++k) {
      const auto [i, j] = out.assignment.pairs[k];
      pred.push_back(state.control_points(begin + i));
      target.push_back(gt.instances[j].ctrl);
      probs.push_back(state.mask_probability(begin + i));
      masks.push_back(gt.instances[j].mask);
      local.pairs.emplace_back(k, k);
    }
    out.terms.reg = l1_regression_loss(pred, target, local);
    const auto pts = opts.dense_mask_cost ? dense_mask_points(state.height, state.width)
                                          : sample_mask_points(opts.sample_count, state.height, state.width, seed);
    const MaskTerms m = mask_loss(probs, masks, state.height, state.width, local, pts);
    out.terms.mask_bce = m.bce;
    out.terms.mask_dice = m.dice_loss;
  }
  std::vector<int> labels(count, -1);
  for (const auto& [i, j] : out.assignment.pairs) labels[i] = gt.instances[j].label;
  out.terms.cls = classification_loss(
      std::span<const double>(state.class_logits).subspan(begin * state.n_classes, count * state.n_classes),
      state.n_classes, labels);
  return out;
}

/// Sampling seed used for decoder state `layer`, block 0 (one-to-one) or 1 (one-to-many).
inline std::uint64_t loss_seed(std::uint64_t seed, std::size_t layer, std::size_t block) {
  return mix_seed(seed, layer, block);
}

/// Loss of one decoder state. n_queries is the one-to-one block size Q; the remaining
/// state.n_queries - Q predictions form the one-to-many block matched against GT repeated R times.
inline LayerLoss layer_loss(const QueryState& state, std::size_t layer, std::size_t n_queries, std::size_t repetitions,
                            const GroundTruth& gt, const LossWeights& weights, const LossOptions& opts = {}) {
  weights.validate();
  if (state.n_queries != n_queries * (1 + repetitions)) throw ShapeError("layer_loss: query count != Q * (1 + R)");
  LayerLoss out;
  out.one_to_one = block_loss(state, 0, n_queries, gt, opts, loss_seed(opts.seed, layer, 0));
  out.total = out.one_to_one.terms.weighted(weights);
  if (repetitions > 0) {
    out.one_to_many = block_loss(state, n_queries, n_queries * repetitions, repeat_ground_truth(gt, repetitions), opts,
                                 loss_seed(opts.seed, layer, 1));
    out.total += weights.lambda_one_to_many * out.one_to_many.terms.weighted(weights);
  }
  return out;
}

/// Deep supervision over every decoder state (index 0 = initial prediction).
inline TotalLoss total_loss(std::span<const QueryState> states, std::size_t n_queries, std::size_t repetitions,
                            const GroundTruth& gt, const LossWeights& weights, const LossOptions& opts = {}) {
  TotalLoss out;
  for (std::size_t l = 0; l < states.size(); ++l) {
    LayerLoss ll = layer_loss(states[l], l, n_queries, repetitions, gt, weights, opts);
    out.one_to_one += ll.one_to_one.terms.weighted(weights);
    if (repetitions > 0) out.one_to_many += weights.lambda_one_to_many * ll.one_to_many.terms.weighted(weights);
    out.total += ll.total;
    out.layers.push_back(std::move(ll));
  }
  return out;
}

}  // namespace topobda
