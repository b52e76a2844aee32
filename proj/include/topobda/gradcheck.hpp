#pragma once

// Central finite-difference checks of the analytic gradients. Every check reduces the
// operation to a scalar <g, f(x)> with a random upstream vector g and compares the
// vector-Jacobian product against (F(x + h) - F(x - h)) / 2h coordinate by coordinate.
// Inputs whose sampling locations sit within kKinkMargin cells of a lattice line are
// redrawn, since the bilinear interpolant is only piecewise smooth there.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "topobda/attention.hpp"
#include "topobda/bezier.hpp"
#include "topobda/grid.hpp"
#include "topobda/losses.hpp"
#include "topobda/mask_sampling.hpp"
#include "topobda/random.hpp"

namespace topobda {

inline constexpr double kFdStep = 1e-6;
inline constexpr double kKinkMargin = 1e-3;
inline constexpr double kRelErrorFloor = 1e-3;

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::uint64_t seed = 0;
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
};

/// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = kRelErrorFloor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares grad against central differences of f at x for every coordinate.
inline void compare_gradient(GradCheckEntry& entry, const std::function<double(std::span<const double>)>& f,
                             std::span<const double> x, std::span<const double> grad, double h = kFdStep) {
  std::vector<double> xp(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    const double numeric = (fp - fm) / (2.0 * h);
    entry.max_abs_error = std::max(entry.max_abs_error, std::abs(grad[i] - numeric));
    entry.max_rel_error = std::max(entry.max_rel_error, relative_error(grad[i], numeric));
    ++entry.checked;
  }
}

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double sd = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng, 0.0, sd);
  return v;
}

inline FeatureGrid random_grid(Rng& rng, std::size_t h, std::size_t w, std::size_t c) {
  return FeatureGrid(h, w, c, random_vector(rng, h * w * c));
}

inline bool clear_of_kinks(std::size_t h, std::size_t w, std::span<const SamplePoint> pts) {
  return std::all_of(pts.begin(), pts.end(), [&](SamplePoint p) { return lattice_margin(h, w, p) > kKinkMargin; });
}

inline SamplePoint random_point(Rng& rng, std::size_t h, std::size_t w) {
  for (;;) {
    const SamplePoint p{uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95)};
    if (lattice_margin(h, w, p) > kKinkMargin) return p;
  }
}

/// Draws query and anchors until every sampling location clears the lattice lines.
template <typename MakeRefs>
std::vector<double> kink_free_query(Rng& rng, const ValueField& values, const DeformAttnParams& p, MakeRefs&& refs) {
  for (;;) {
    std::vector<double> q = random_vector(rng, p.d_model);
    DeformTrace trace;
    deformable_attention(q, values, refs(q), p, nullptr, &trace);
    if (clear_of_kinks(values.grid.height(), values.grid.width(), trace.locations)) return q;
  }
}

inline std::vector<double> flatten(std::span<const SamplePoint> pts) {
  std::vector<double> v;
  for (const SamplePoint& p : pts) {
    v.push_back(p.x);
    v.push_back(p.y);
  }
  return v;
}

inline std::vector<SamplePoint> unflatten(std::span<const double> v) {
  std::vector<SamplePoint> pts(v.size() / 2);
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {v[2 * i], v[2 * i + 1]};
  return pts;
}

}  // namespace detail

struct GradCheckConfig {
  std::size_t height = 12;
  std::size_t width = 10;
  std::size_t d_model = 16;
  std::size_t n_heads = 4;
  std::size_t n_samples = 3;
  std::size_t order = 3;
  std::size_t value_channels = 8;
  std::size_t mask_samples = 50;
};

inline GradCheckEntry check_bilinear(std::uint64_t seed, const GradCheckConfig& cfg = {}) {
  Rng rng = make_rng(seed, 0x67, 1);
  GradCheckEntry e{"bilinear_sample"};
  const FeatureGrid grid = detail::random_grid(rng, cfg.height, cfg.width, 3);
  for (int trial = 0; trial < 8; ++trial) {
    const SamplePoint p = trial == 0 ? SamplePoint{0.01, 0.99} : detail::random_point(rng, cfg.height, cfg.width);
    if (!detail::clear_of_kinks(cfg.height, cfg.width, std::span<const SamplePoint>(&p, 1))) continue;
    const std::vector<double> g = detail::random_vector(rng, 3);
    const SampleGradient sg = bilinear_sample_grad(grid, p);
    const std::vector<double> analytic = {detail::dot(g, sg.d_dx), detail::dot(g, sg.d_dy)};
    const std::vector<double> x = {p.x, p.y};
    compare_gradient(
        e, [&](std::span<const double> v) { return detail::dot(g, bilinear_sample(grid, {v[0], v[1]})); }, x,
        analytic);
  }
  return e;
}

/// Query and anchor gradients of the shared deformable core with arbitrary anchors (MPDA).
inline GradCheckEntry check_mpda(std::uint64_t seed, const GradCheckConfig& cfg = {}) {
  Rng rng = make_rng(seed, 0x67, 2);
  GradCheckEntry e{"mpda"};
  const DeformAttnParams p = DeformAttnParams::random(cfg.d_model, cfg.n_heads, cfg.n_samples, cfg.value_channels, rng);
  const ValueField values = project_values(detail::random_grid(rng, cfg.height, cfg.width, cfg.value_channels), p);
  std::vector<SamplePoint> refs(cfg.n_heads);
  for (auto& r : refs) r = detail::random_point(rng, cfg.height, cfg.width);
  const auto q = detail::kink_free_query(rng, values, p, [&](std::span<const double>) { return refs; });
  const auto g = detail::random_vector(rng, cfg.d_model);
  const DeformGradient dg = deformable_attention_backward(q, values, refs, p, g);
  compare_gradient(
      e, [&](std::span<const double> v) { return detail::dot(g, mpda(v, values, refs, p)); }, q, dg.query);
  const auto flat = detail::flatten(refs);
  compare_gradient(
      e, [&](std::span<const double> v) { return detail::dot(g, mpda(q, values, detail::unflatten(v), p)); }, flat,
      detail::flatten(dg.references));
  return e;
}

/// SPDA with its learned reference point: the query reaches the output through the offsets,
/// the weights and sigmoid(reference_points(q)).
inline GradCheckEntry check_spda(std::uint64_t seed, const GradCheckConfig& cfg = {}) {
  Rng rng = make_rng(seed, 0x67, 3);
  GradCheckEntry e{"spda"};
  const DeformAttnParams p = DeformAttnParams::random(cfg.d_model, cfg.n_heads, cfg.n_samples, cfg.value_channels, rng);
  const ValueField values = project_values(detail::random_grid(rng, cfg.height, cfg.width, cfg.value_channels), p);
  auto refs_of = [&](std::span<const double> q) { return std::vector<SamplePoint>(p.n_heads, spda_reference(q, p)); };
  const auto q = detail::kink_free_query(rng, values, p, refs_of);
  const auto g = detail::random_vector(rng, cfg.d_model);
  const std::vector<SamplePoint> refs = refs_of(q);
  const DeformGradient dg = deformable_attention_backward(q, values, refs, p, g);
  const std::vector<double> raw = p.reference_points(q);
  double gx = 0.0, gy = 0.0;
  for (const SamplePoint& r : dg.references) {
    gx += r.x;
    gy += r.y;
  }
  const double sx = sigmoid(raw[0]), sy = sigmoid(raw[1]);
  const std::vector<double> g_raw = {gx * sx * (1.0 - sx), gy * sy * (1.0 - sy)};
  std::vector<double> analytic = p.reference_points.backward_input(g_raw);
  for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] += dg.query[i];
  compare_gradient(
      e, [&](std::span<const double> v) { return detail::dot(g, spda_learned_reference(v, values, p)); }, q,
      analytic);
  return e;
}

/// BDA: query gradient and the x/y gradient of every control point (z has no influence).
inline GradCheckEntry check_bda(std::uint64_t seed, const GradCheckConfig& cfg = {}) {
  Rng rng = make_rng(seed, 0x67, 4);
  GradCheckEntry e{"bda"};
  const std::size_t heads = cfg.order + 1;
  const DeformAttnParams p = DeformAttnParams::random(cfg.d_model, heads, cfg.n_samples, cfg.value_channels, rng);
  const ValueField values = project_values(detail::random_grid(rng, cfg.height, cfg.width, cfg.value_channels), p);
  std::vector<Point3> pts(heads);
  for (Point3& c : pts) {
    const SamplePoint s = detail::random_point(rng, cfg.height, cfg.width);
    c = {s.x, s.y, uniform(rng, 0.0, 1.0)};
  }
  const ControlPointSet ctrl(pts);
  const auto q = detail::kink_free_query(rng, values, p, [&](std::span<const double>) { return control_point_refs(ctrl); });
  const auto g = detail::random_vector(rng, cfg.d_model);
  const DeformGradient dg = deformable_attention_backward(q, values, control_point_refs(ctrl), p, g);
  compare_gradient(
      e, [&](std::span<const double> v) { return detail::dot(g, bda(v, values, ctrl, p)); }, q, dg.query);
  std::vector<double> flat, analytic;
  for (std::size_t n = 0; n < heads; ++n)
    for (std::size_t d = 0; d < 3; ++d) {
      flat.push_back(ctrl[n][d]);
      analytic.push_back(d == 0 ? dg.references[n].x : (d == 1 ? dg.references[n].y : 0.0));
    }
  compare_gradient(
      e,
      [&](std::span<const double> v) {
        std::vector<Point3> c(heads);
        for (std::size_t n = 0; n < heads; ++n) c[n] = {v[3 * n], v[3 * n + 1], v[3 * n + 2]};
        return detail::dot(g, bda(q, values, ControlPointSet(c), p));
      },
      flat, analytic);
  return e;
}

/// Standard cross-attention, query gradient.
inline GradCheckEntry check_standard_attention(std::uint64_t seed, const GradCheckConfig& cfg = {}) {
  Rng rng = make_rng(seed, 0x67, 5);
  GradCheckEntry e{"standard_attention"};
  const CrossAttnParams p = CrossAttnParams::random(cfg.d_model, cfg.value_channels, rng);
  const KeyValueField kv =
      project_keys_values(detail::random_grid(rng, cfg.height, cfg.width, cfg.value_channels), p);
  const auto q = detail::random_vector(rng, cfg.d_model);
  const auto g = detail::random_vector(rng, cfg.d_model);
  const auto analytic = standard_cross_attention_backward(q, kv, p, g);
  compare_gradient(
      e, [&](std::span<const double> v) { return detail::dot(g, standard_cross_attention(v, kv, p)); }, q,
      analytic);
  return e;
}

/// L_reg w.r.t. predicted control points under a fixed assignment.
inline GradCheckEntry check_l1_regression(std::uint64_t seed, const GradCheckConfig& cfg = {}) {
  Rng rng = make_rng(seed, 0x67, 6);
  GradCheckEntry e{"l1_regression"};
  const std::size_t n_pred = 4, n_gt = 3, nc = cfg.order + 1;
  auto random_set = [&] {
    std::vector<Point3> pts(nc);
    for (Point3& c : pts) c = {uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)};
    return ControlPointSet(pts);
  };
  std::vector<ControlPointSet> pred, gt;
  for (std::size_t i = 0; i < n_pred; ++i) pred.push_back(random_set());
  for (std::size_t j = 0; j < n_gt; ++j) gt.push_back(random_set());
  const Assignment a{{{0, 2}, {1, 0}, {3, 1}}, 0.0};
  // Keep every coordinate away from the |.| kink.
  for (const auto& [i, j] : a.pairs)
    for (std::size_t n = 0; n < nc; ++n)
      for (std::size_t d = 0; d < 3; ++d)
        if (std::abs(pred[i][n][d] - gt[j][n][d]) < 1e-3) pred[i][n][d] += 0.01;
  std::vector<double> flat, analytic;
  const auto grad = l1_regression_grad(pred, gt, a);
  for (std::size_t i = 0; i < n_pred; ++i)
    for (std::size_t n = 0; n < nc; ++n)
      for (std::size_t d = 0; d < 3; ++d) {
        flat.push_back(pred[i][n][d]);
        analytic.push_back(grad[i][n][d]);
      }
  compare_gradient(
      e,
      [&](std::span<const double> v) {
        std::vector<ControlPointSet> pv;
        for (std::size_t i = 0; i < n_pred; ++i) {
          std::vector<Point3> pts(nc);
          for (std::size_t n = 0; n < nc; ++n) {
            const std::size_t base = (i * nc + n) * 3;
            pts[n] = {v[base], v[base + 1], v[base + 2]};
          }
          pv.emplace_back(pts);
        }
        return l1_regression_loss(pv, gt, a);
      },
      flat, analytic);
  return e;
}

/// Mean sampled BCE w.r.t. pre-mask logits.
inline GradCheckEntry check_mask_bce(std::uint64_t seed, const GradCheckConfig& cfg = {}) {
  Rng rng = make_rng(seed, 0x67, 7);
  GradCheckEntry e{"mask_bce"};
  const std::size_t H = cfg.height, W = cfg.width;
  const auto logits = detail::random_vector(rng, H * W, 1.5);
  std::vector<std::uint8_t> mask(H * W);
  for (auto& m : mask) m = uniform(rng, 0.0, 1.0) < 0.3 ? 1 : 0;
  const auto pts = sample_mask_points(cfg.mask_samples, H, W, mix_seed(seed, 0x6d));
  const auto analytic = mask_bce_grad_logits(logits, mask, H, W, pts);
  const auto target = read_map_at(std::span<const std::uint8_t>(mask), H, W, pts);
  compare_gradient(
      e,
      [&](std::span<const double> v) {
        std::vector<double> prob(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) prob[i] = sigmoid(v[i]);
        return mask_terms(read_map_at(std::span<const double>(prob), H, W, pts), target).bce;
      },
      logits, analytic);
  return e;
}

inline GradCheckReport run_gradcheck(std::uint64_t seed, const GradCheckConfig& cfg = {}) {
  GradCheckReport r;
  r.seed = seed;
  r.entries.push_back(check_bilinear(seed, cfg));
  r.entries.push_back(check_spda(seed, cfg));
  r.entries.push_back(check_mpda(seed, cfg));
  r.entries.push_back(check_bda(seed, cfg));
  r.entries.push_back(check_standard_attention(seed, cfg));
  r.entries.push_back(check_l1_regression(seed, cfg));
  r.entries.push_back(check_mask_bce(seed, cfg));
  return r;
}

}  // namespace topobda
