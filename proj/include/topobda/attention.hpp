#pragma once

// Cross-attention variants over a BEV value grid:
//   SPDA  every head shares one reference point,
//   MPDA  head l is anchored at polyline point l (Bernstein conversion from control points),
//   BDA   head n is anchored at Bezier control point n (no conversion),
//   SA    dense softmax attention over every grid cell.
//
// Deformable variants share one core: per head m and sample k the query produces an offset
// (in cell units, scaled by 1/max(H, W) into normalized coordinates) and a logit; logits are
// softmax-normalized over k within each head; head m reads channels [m*dh, (m+1)*dh) of the
// projected value field; heads are concatenated and output-projected.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "topobda/bezier.hpp"
#include "topobda/dense.hpp"
#include "topobda/error.hpp"
#include "topobda/grid.hpp"
#include "topobda/op_counter.hpp"
#include "topobda/random.hpp"

namespace topobda {

struct DeformAttnParams {
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  std::size_t n_samples = 0;
  std::size_t value_channels = 0;
  Linear sampling_offsets;   // d_model -> n_heads * n_samples * 2
  Linear attention_weights;  // d_model -> n_heads * n_samples
  Linear value_proj;         // value_channels -> d_model
  Linear output_proj;        // d_model -> d_model
  Linear reference_points;   // d_model -> 2, used by the SPDA pipeline only

  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (n_heads == 0 || n_samples == 0 || d_model == 0) throw ShapeError("DeformAttnParams: zero-sized dimension");
    if (d_model % n_heads != 0)
      throw ShapeError("DeformAttnParams: d_model (" + std::to_string(d_model) + ") not divisible by heads (" +
                       std::to_string(n_heads) + ")");
    if (sampling_offsets.in != d_model || sampling_offsets.out != n_heads * n_samples * 2 ||
        attention_weights.in != d_model || attention_weights.out != n_heads * n_samples ||
        value_proj.in != value_channels || value_proj.out != d_model || output_proj.in != d_model ||
        output_proj.out != d_model || reference_points.in != d_model || reference_points.out != 2)
      throw ShapeError("DeformAttnParams: linear map shapes inconsistent with configuration");
  }

  static DeformAttnParams random(std::size_t d_model, std::size_t n_heads, std::size_t n_samples,
                                 std::size_t value_channels, Rng& rng) {
    DeformAttnParams p;
    p.d_model = d_model;
    p.n_heads = n_heads;
    p.n_samples = n_samples;
    p.value_channels = value_channels;
    p.sampling_offsets = Linear::random(d_model, n_heads * n_samples * 2, rng);
    p.attention_weights = Linear::random(d_model, n_heads * n_samples, rng);
    p.value_proj = Linear::random(value_channels, d_model, rng);
    p.output_proj = Linear::random(d_model, d_model, rng);
    p.reference_points = Linear::random(d_model, 2, rng);
    p.validate();
    return p;
  }
};

/// Grid after the value projection; computed once and shared by all queries.
struct ValueField {
  FeatureGrid grid;
};

inline ValueField project_values(const FeatureGrid& grid, const Linear& value_proj, OpCounter* ops = nullptr) {
  if (grid.channels() != value_proj.in) throw ShapeError("project_values: grid channels != value_proj input");
  std::vector<double> data(grid.height() * grid.width() * value_proj.out);
  for (std::size_t r = 0; r < grid.height(); ++r)
    for (std::size_t c = 0; c < grid.width(); ++c) {
      const std::size_t cell = r * grid.width() + c;
      value_proj.apply(grid.cell(r, c), std::span<double>(data.data() + cell * value_proj.out, value_proj.out));
    }
  if (ops) ops->add_matmul(static_cast<std::uint64_t>(grid.height()) * grid.width() * value_proj.in * value_proj.out);
  return ValueField{FeatureGrid(grid.height(), grid.width(), value_proj.out, std::move(data), grid.cell_size_m())};
}

inline ValueField project_values(const FeatureGrid& grid, const DeformAttnParams& p, OpCounter* ops = nullptr) {
  return project_values(grid, p.value_proj, ops);
}

/// Per-call intermediates, exposed for tests and for the backward pass.
struct DeformTrace {
  std::vector<double> offsets;        // [m][k][xy] in cell units
  std::vector<double> weights;        // [m][k], softmax over k
  std::vector<SamplePoint> locations; // [m][k]
};

namespace detail {

inline void check_query(std::span<const double> query, std::size_t d_model) {
  if (query.size() != d_model) throw ShapeError("attention: query size != d_model");
  for (double v : query)
    if (std::isnan(v)) throw DomainError("attention: NaN in query");
}

inline double offset_scale(const FeatureGrid& values) {
  return 1.0 / static_cast<double>(std::max(values.height(), values.width()));
}

}  // namespace detail

/// Shared deformable core: head m is anchored at head_refs[m].
inline std::vector<double> deformable_attention(std::span<const double> query, const ValueField& values,
                                                std::span<const SamplePoint> head_refs, const DeformAttnParams& p,
                                                OpCounter* ops = nullptr, DeformTrace* trace = nullptr) {
  detail::check_query(query, p.d_model);
  if (head_refs.size() != p.n_heads)
    throw ShapeError("deformable attention: " + std::to_string(head_refs.size()) + " reference points for " +
                     std::to_string(p.n_heads) + " heads");
  if (values.grid.channels() != p.d_model) throw ShapeError("deformable attention: value field channels != d_model");
  for (const SamplePoint& r : head_refs)
    if (!std::isfinite(r.x) || !std::isfinite(r.y)) throw DomainError("deformable attention: non-finite reference");

  const std::size_t M = p.n_heads, K = p.n_samples, dh = p.head_dim();
  std::vector<double> offsets = p.sampling_offsets(query, ops);
  std::vector<double> weights = p.attention_weights(query, ops);
  for (std::size_t m = 0; m < M; ++m) softmax_inplace(std::span<double>(weights.data() + m * K, K));

  const double scale = detail::offset_scale(values.grid);
  std::vector<double> heads(p.d_model, 0.0);
  std::vector<double> sample(dh);
  std::vector<SamplePoint> locations(M * K);
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t mk = m * K + k;
      const SamplePoint loc{head_refs[m].x + offsets[mk * 2] * scale, head_refs[m].y + offsets[mk * 2 + 1] * scale};
      locations[mk] = loc;
      sample_channels(values.grid, loc, m * dh, sample);
      const double a = weights[mk];
      for (std::size_t c = 0; c < dh; ++c) heads[m * dh + c] += a * sample[c];
    }
  }
  if (ops) {
    ops->sample_calls += M * K;
    ops->multiply_accumulates += static_cast<std::uint64_t>(M) * K * (4 * dh + dh);
  }
  std::vector<double> out = p.output_proj(heads, ops);
  if (trace) *trace = DeformTrace{std::move(offsets), std::move(weights), std::move(locations)};
  return out;
}

/// Single-point deformable attention: every head anchored at `ref`.
inline std::vector<double> spda(std::span<const double> query, const ValueField& values, SamplePoint ref,
                                const DeformAttnParams& p, OpCounter* ops = nullptr) {
  const std::vector<SamplePoint> refs(p.n_heads, ref);
  return deformable_attention(query, values, refs, p, ops);
}

/// Reference point regressed from the query, sigmoid(reference_points(q)).
inline SamplePoint spda_reference(std::span<const double> query, const DeformAttnParams& p, OpCounter* ops = nullptr) {
  const std::vector<double> r = p.reference_points(query, ops);
  return {sigmoid(r[0]), sigmoid(r[1])};
}

/// SPDA as used in a polyline decoder: the reference point is learned from the query.
inline std::vector<double> spda_learned_reference(std::span<const double> query, const ValueField& values,
                                                  const DeformAttnParams& p, OpCounter* ops = nullptr) {
  return spda(query, values, spda_reference(query, p, ops), p, ops);
}

/// Multi-point deformable attention: head l anchored at polyline point l (x, y only).
inline std::vector<double> mpda(std::span<const double> query, const ValueField& values,
                                std::span<const SamplePoint> polyline_refs, const DeformAttnParams& p,
                                OpCounter* ops = nullptr) {
  if (polyline_refs.size() != p.n_heads) throw ShapeError("mpda: polyline point count != n_heads");
  return deformable_attention(query, values, polyline_refs, p, ops);
}

/// 2D projection of B C; counted as (L+1)(N+1)*2 multiply-accumulates.
inline std::vector<SamplePoint> bernstein_refs(const BernsteinMatrix& basis, const ControlPointSet& ctrl,
                                               OpCounter* ops = nullptr) {
  if (ctrl.size() != basis.cols()) throw ShapeError("bernstein_refs: control point count != basis columns");
  std::vector<SamplePoint> refs(basis.rows());
  for (std::size_t l = 0; l < basis.rows(); ++l) {
    double x = 0.0, y = 0.0;
    for (std::size_t n = 0; n < basis.cols(); ++n) {
      x += basis(l, n) * ctrl[n].x;
      y += basis(l, n) * ctrl[n].y;
    }
    refs[l] = {x, y};
  }
  if (ops) ops->add_matmul(static_cast<std::uint64_t>(basis.rows()) * basis.cols() * 2);
  return refs;
}

/// MPDA as used in a Bezier decoder: control points converted to L+1 polyline anchors first.
inline std::vector<double> mpda_from_control_points(std::span<const double> query, const ValueField& values,
                                                    const ControlPointSet& ctrl, const BernsteinMatrix& basis,
                                                    const DeformAttnParams& p, OpCounter* ops = nullptr) {
  return mpda(query, values, bernstein_refs(basis, ctrl, ops), p, ops);
}

inline std::vector<SamplePoint> control_point_refs(const ControlPointSet& ctrl) {
  std::vector<SamplePoint> refs(ctrl.size());
  for (std::size_t n = 0; n < ctrl.size(); ++n) refs[n] = {ctrl[n].x, ctrl[n].y};
  return refs;
}

/// Bezier deformable attention: head n anchored at control point n; height is ignored.
inline std::vector<double> bda(std::span<const double> query, const ValueField& values, const ControlPointSet& ctrl,
                               const DeformAttnParams& p, OpCounter* ops = nullptr) {
  if (ctrl.size() != p.n_heads) throw ShapeError("bda: control point count != n_heads");
  return deformable_attention(query, values, control_point_refs(ctrl), p, ops);
}

// Convenience overloads that project the raw grid first.
inline std::vector<double> spda(std::span<const double> query, const FeatureGrid& grid, SamplePoint ref,
                                const DeformAttnParams& p, OpCounter* ops = nullptr) {
  return spda(query, project_values(grid, p), ref, p, ops);
}
inline std::vector<double> mpda(std::span<const double> query, const FeatureGrid& grid,
                                std::span<const SamplePoint> refs, const DeformAttnParams& p,
                                OpCounter* ops = nullptr) {
  return mpda(query, project_values(grid, p), refs, p, ops);
}
inline std::vector<double> bda(std::span<const double> query, const FeatureGrid& grid, const ControlPointSet& ctrl,
                               const DeformAttnParams& p, OpCounter* ops = nullptr) {
  return bda(query, project_values(grid, p), ctrl, p, ops);
}

struct DeformGradient {
  std::vector<double> query;            // d_model
  std::vector<SamplePoint> references;  // one per head
};

/// Vector-Jacobian product of deformable_attention for upstream gradient grad_out.
inline DeformGradient deformable_attention_backward(std::span<const double> query, const ValueField& values,
                                                    std::span<const SamplePoint> head_refs,
                                                    const DeformAttnParams& p, std::span<const double> grad_out) {
  if (grad_out.size() != p.d_model) throw ShapeError("attention backward: grad_out size != d_model");
  DeformTrace trace;
  deformable_attention(query, values, head_refs, p, nullptr, &trace);
  const std::size_t M = p.n_heads, K = p.n_samples, dh = p.head_dim();
  const std::vector<double> grad_heads = p.output_proj.backward_input(grad_out);
  const double scale = detail::offset_scale(values.grid);
  const FeatureGrid& g = values.grid;

  std::vector<double> grad_weights(M * K, 0.0);
  std::vector<double> grad_offsets(M * K * 2, 0.0);
  DeformGradient result{std::vector<double>(p.d_model, 0.0), std::vector<SamplePoint>(M)};

  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t mk = m * K + k;
      const BilinearStencil s = bilinear_stencil(g.height(), g.width(), trace.locations[mk]);
      double dot_value = 0.0, dot_du = 0.0, dot_dv = 0.0;
      for (std::size_t t = 0; t < 4; ++t) {
        const SampleTap& tap = s.taps[t];
        if (!tap.in_bounds) continue;
        const auto cell = g.cell(static_cast<std::size_t>(tap.row), static_cast<std::size_t>(tap.col));
        double proj = 0.0;
        for (std::size_t c = 0; c < dh; ++c) proj += grad_heads[m * dh + c] * cell[m * dh + c];
        dot_value += tap.weight * proj;
        dot_du += s.d_weight_du[t] * proj;
        dot_dv += s.d_weight_dv[t] * proj;
      }
      grad_weights[mk] = dot_value;
      const double a = trace.weights[mk];
      const double gx = a * dot_du * static_cast<double>(g.width());
      const double gy = a * dot_dv * static_cast<double>(g.height());
      result.references[m].x += gx;
      result.references[m].y += gy;
      grad_offsets[mk * 2] = gx * scale;
      grad_offsets[mk * 2 + 1] = gy * scale;
    }
    // softmax backward within head m
    double inner = 0.0;
    for (std::size_t k = 0; k < K; ++k) inner += trace.weights[m * K + k] * grad_weights[m * K + k];
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t mk = m * K + k;
      grad_weights[mk] = trace.weights[mk] * (grad_weights[mk] - inner);
    }
  }
  const std::vector<double> from_offsets = p.sampling_offsets.backward_input(grad_offsets);
  const std::vector<double> from_weights = p.attention_weights.backward_input(grad_weights);
  for (std::size_t i = 0; i < p.d_model; ++i) result.query[i] = from_offsets[i] + from_weights[i];
  return result;
}

// ---------------------------------------------------------------------------
// Standard (dense) cross-attention

struct CrossAttnParams {
  std::size_t d_model = 0;
  std::size_t value_channels = 0;
  Linear query_proj;   // d -> d
  Linear key_proj;     // C -> d
  Linear value_proj;   // C -> d
  Linear output_proj;  // d -> d

  static CrossAttnParams random(std::size_t d_model, std::size_t value_channels, Rng& rng) {
    return CrossAttnParams{d_model,
                           value_channels,
                           Linear::random(d_model, d_model, rng),
                           Linear::random(value_channels, d_model, rng),
                           Linear::random(value_channels, d_model, rng),
                           Linear::random(d_model, d_model, rng)};
  }
};

/// Projected keys and values of every cell (row-major cell order).
struct KeyValueField {
  Matrix keys;
  Matrix values;
};

inline KeyValueField project_keys_values(const FeatureGrid& grid, const CrossAttnParams& p, OpCounter* ops = nullptr) {
  if (grid.channels() != p.value_channels) throw ShapeError("project_keys_values: grid channels mismatch");
  const std::size_t cells = grid.height() * grid.width();
  KeyValueField kv{Matrix(cells, p.d_model), Matrix(cells, p.d_model)};
  for (std::size_t r = 0; r < grid.height(); ++r)
    for (std::size_t c = 0; c < grid.width(); ++c) {
      const std::size_t i = r * grid.width() + c;
      p.key_proj.apply(grid.cell(r, c), kv.keys.row(i));
      p.value_proj.apply(grid.cell(r, c), kv.values.row(i));
    }
  if (ops) {
    ops->add_matmul(static_cast<std::uint64_t>(cells) * p.value_channels * p.d_model);
    ops->add_matmul(static_cast<std::uint64_t>(cells) * p.value_channels * p.d_model);
  }
  return kv;
}

/// softmax(q'^T K / sqrt(d)) V followed by the output projection.
inline std::vector<double> standard_cross_attention(std::span<const double> query, const KeyValueField& kv,
                                                    const CrossAttnParams& p, OpCounter* ops = nullptr,
                                                    std::vector<double>* weights_out = nullptr) {
  detail::check_query(query, p.d_model);
  const std::vector<double> q = p.query_proj(query, ops);
  const std::size_t cells = kv.keys.rows();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.d_model));
  std::vector<double> scores(cells);
  for (std::size_t j = 0; j < cells; ++j) {
    const auto k = kv.keys.row(j);
    double s = 0.0;
    for (std::size_t c = 0; c < p.d_model; ++c) s += q[c] * k[c];
    scores[j] = s * inv_sqrt_d;
  }
  softmax_inplace(scores);
  std::vector<double> mixed(p.d_model, 0.0);
  for (std::size_t j = 0; j < cells; ++j) {
    const auto v = kv.values.row(j);
    for (std::size_t c = 0; c < p.d_model; ++c) mixed[c] += scores[j] * v[c];
  }
  if (ops) {
    ops->add_matmul(static_cast<std::uint64_t>(cells) * p.d_model);
    ops->add_matmul(static_cast<std::uint64_t>(cells) * p.d_model);
  }
  if (weights_out) *weights_out = scores;
  return p.output_proj(mixed, ops);
}

inline std::vector<double> standard_cross_attention(std::span<const double> query, const FeatureGrid& grid,
                                                    const CrossAttnParams& p, OpCounter* ops = nullptr) {
  return standard_cross_attention(query, project_keys_values(grid, p), p, ops);
}

/// Query gradient of standard_cross_attention for upstream gradient grad_out.
inline std::vector<double> standard_cross_attention_backward(std::span<const double> query, const KeyValueField& kv,
                                                             const CrossAttnParams& p,
                                                             std::span<const double> grad_out) {
  std::vector<double> weights;
  standard_cross_attention(query, kv, p, nullptr, &weights);
  const std::vector<double> grad_mixed = p.output_proj.backward_input(grad_out);
  const std::size_t cells = kv.keys.rows();
  std::vector<double> grad_w(cells);
  double inner = 0.0;
  for (std::size_t j = 0; j < cells; ++j) {
    const auto v = kv.values.row(j);
    double s = 0.0;
    for (std::size_t c = 0; c < p.d_model; ++c) s += grad_mixed[c] * v[c];
    grad_w[j] = s;
    inner += weights[j] * s;
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.d_model));
  std::vector<double> grad_q(p.d_model, 0.0);
  for (std::size_t j = 0; j < cells; ++j) {
    const double gs = weights[j] * (grad_w[j] - inner) * inv_sqrt_d;
    const auto k = kv.keys.row(j);
    for (std::size_t c = 0; c < p.d_model; ++c) grad_q[c] += gs * k[c];
  }
  return p.query_proj.backward_input(grad_q);
}

// ---------------------------------------------------------------------------
// Operation counting

enum class AttentionVariant { standard, spda, mpda, bda };

inline const char* to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::standard: return "SA";
    case AttentionVariant::spda: return "SPDA";
    case AttentionVariant::mpda: return "MPDA";
    case AttentionVariant::bda: return "BDA";
  }
  return "?";
}

struct AttentionConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 4;    ///< SPDA heads; MPDA polyline points (L+1)
  std::size_t n_samples = 4;  ///< K offsets per head
  std::size_t order = 3;      ///< Bezier order N; BDA uses N+1 heads
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t value_channels = 32;
};

namespace detail {
inline OpCounter deformable_core_ops(std::size_t d, std::size_t heads, std::size_t samples) {
  OpCounter c;
  const std::uint64_t dh = d / heads;
  c.add_matmul(static_cast<std::uint64_t>(d) * heads * samples * 2);  // offsets
  c.add_matmul(static_cast<std::uint64_t>(d) * heads * samples);      // attention logits
  c.sample_calls += heads * samples;
  c.multiply_accumulates += static_cast<std::uint64_t>(heads) * samples * (4 * dh + dh);
  c.add_matmul(static_cast<std::uint64_t>(d) * d);  // output projection
  return c;
}
}  // namespace detail

/// Per-query work of one forward call, excluding the grid-wide projections that are
/// computed once and shared by every query (see grid_projection_ops).
inline OpCounter count_ops(AttentionVariant variant, const AttentionConfig& cfg) {
  OpCounter c;
  switch (variant) {
    case AttentionVariant::bda:
      return detail::deformable_core_ops(cfg.d_model, cfg.order + 1, cfg.n_samples);
    case AttentionVariant::spda:
      c.add_matmul(static_cast<std::uint64_t>(cfg.d_model) * 2);  // learned reference point
      return c + detail::deformable_core_ops(cfg.d_model, cfg.n_heads, cfg.n_samples);
    case AttentionVariant::mpda:
      c.add_matmul(static_cast<std::uint64_t>(cfg.n_heads) * (cfg.order + 1) * 2);  // Bernstein conversion
      return c + detail::deformable_core_ops(cfg.d_model, cfg.n_heads, cfg.n_samples);
    case AttentionVariant::standard: {
      const std::uint64_t cells = static_cast<std::uint64_t>(cfg.height) * cfg.width;
      c.add_matmul(static_cast<std::uint64_t>(cfg.d_model) * cfg.d_model);  // query projection
      c.add_matmul(cells * cfg.d_model);                                     // scores
      c.add_matmul(cells * cfg.d_model);                                     // weighted values
      c.add_matmul(static_cast<std::uint64_t>(cfg.d_model) * cfg.d_model);  // output projection
      return c;
    }
  }
  return c;
}

/// Grid-wide projections shared across queries (value field, or keys and values for SA).
inline OpCounter grid_projection_ops(AttentionVariant variant, const AttentionConfig& cfg) {
  OpCounter c;
  const std::uint64_t per = static_cast<std::uint64_t>(cfg.height) * cfg.width * cfg.value_channels * cfg.d_model;
  c.add_matmul(per);
  if (variant == AttentionVariant::standard) c.add_matmul(per);
  return c;
}

}  // namespace topobda
