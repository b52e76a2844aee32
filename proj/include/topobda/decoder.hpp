#pragma once

// Iterative-refinement decoder driven by Bezier deformable attention.
//
// Layer 0 ("init") predicts control points directly, C = sigmoid(MLP_B(E)), and the first
// pre-mask F_mask . MLP_M(E). Every subsequent layer l:
//   R      = C[:, :, :2]                           reference points (height discarded)
//   P      = Linear(sine(R))                        positional embedding
//   A      = BDA(E + P, F, R)                       cross-attention
//   x1     = LN(E + A)
//   x2     = LN(x1 + SelfAttn(q = k = x1 + P, v = x1, mask))
//   E'     = LN(x2 + FFN(x2))
//   C'     = sigmoid(inverse_sigmoid(C) + MLP_B(E'))
//   Pmask' = Pmask + F_mask . MLP_M(E')
//   logits = MLP_cls(E')
// With one-to-many repetition R > 0 the query set is [Q one-to-one | Q*R auxiliary] and
// self-attention is block-masked so the two groups never exchange information.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "topobda/attention.hpp"
#include "topobda/bezier.hpp"
#include "topobda/dense.hpp"
#include "topobda/error.hpp"
#include "topobda/grid.hpp"
#include "topobda/random.hpp"

namespace topobda {

struct DecoderConfig {
  std::size_t n_layers = 3;
  std::size_t d_model = 32;
  std::size_t n_queries = 8;
  std::size_t n_classes = 2;
  std::size_t one_to_many_R = 0;
  std::size_t order = 3;
  std::size_t n_samples = 4;
  std::size_t self_attn_heads = 4;
  std::size_t ffn_width = 64;
  bool shared_layer_weights = false;
  std::uint64_t seed = 0;

  std::size_t n_ctrl() const { return order + 1; }
  std::size_t total_queries() const { return n_queries * (1 + one_to_many_R); }
  std::size_t pos_feats() const { return d_model / 2; }

  static DecoderConfig desk() { return DecoderConfig{}; }

  static DecoderConfig paper_scale() {
    DecoderConfig c;
    c.n_layers = 10;
    c.d_model = 256;
    c.n_queries = 200;
    c.n_samples = 32;
    c.self_attn_heads = 8;
    c.ffn_width = 512;
    return c;
  }

  void validate() const {
    if (n_layers < 1) throw ShapeError("DecoderConfig: n_layers must be >= 1");
    if (order < 1) throw ShapeError("DecoderConfig: order must be >= 1");
    if (n_queries < 1) throw ShapeError("DecoderConfig: n_queries must be >= 1");
    if (n_classes < 2) throw ShapeError("DecoderConfig: n_classes must be >= 2");
    if (d_model % n_ctrl() != 0)
      throw ShapeError("DecoderConfig: d_model (" + std::to_string(d_model) +
                       ") must be divisible by the number of control points (" + std::to_string(n_ctrl()) + ")");
    if (d_model % self_attn_heads != 0) throw ShapeError("DecoderConfig: d_model not divisible by self-attention heads");
    if (d_model % 4 != 0) throw ShapeError("DecoderConfig: d_model must be a multiple of 4 for sine embeddings");
  }
};

struct PredictionHeads {
  Mlp2 ctrl;  // d -> d -> (N+1)*3
  Mlp2 mask;  // d -> d -> grid channels
  Mlp2 cls;   // d -> d -> n_classes
};

struct SelfAttnParams {
  std::size_t n_heads = 1;
  Linear q, k, v, o;
};

struct DecoderLayerParams {
  DeformAttnParams cross;
  SelfAttnParams self_attn;
  Linear ffn_in;
  Linear ffn_out;
  Linear pos_proj;  // n_ctrl * 2 * pos_feats -> d
};

struct DecoderParams {
  DecoderConfig config;
  std::size_t grid_channels = 0;
  Matrix queries;      // Q x d, one-to-one
  Matrix aux_queries;  // Q*R x d, one-to-many
  std::vector<PredictionHeads> heads;
  std::vector<DecoderLayerParams> layers;

  /// Heads for layer l (0 = initial prediction).
  const PredictionHeads& heads_for(std::size_t l) const {
    return config.shared_layer_weights ? heads[l == 0 ? 0 : 1] : heads[l];
  }
  PredictionHeads& heads_for(std::size_t l) {
    return config.shared_layer_weights ? heads[l == 0 ? 0 : 1] : heads[l];
  }
  /// Attention block of layer l >= 1.
  const DecoderLayerParams& layer_for(std::size_t l) const {
    return config.shared_layer_weights ? layers[0] : layers[l - 1];
  }

  // Every component draws from its own seeded stream, so the parameters of layer l and of the
  // one-to-one queries do not depend on n_layers or on the repetition count R.
  static DecoderParams random(const DecoderConfig& cfg, std::size_t grid_channels) {
    cfg.validate();
    DecoderParams p;
    p.config = cfg;
    p.grid_channels = grid_channels;
    const std::size_t d = cfg.d_model;
    const std::size_t n_heads = cfg.shared_layer_weights ? 2 : cfg.n_layers + 1;
    const std::size_t n_blocks = cfg.shared_layer_weights ? 1 : cfg.n_layers;
    for (std::size_t l = 0; l < n_heads; ++l) {
      Rng rng = make_rng(cfg.seed, 1, l);
      PredictionHeads h;
      h.ctrl = Mlp2::random(d, d, cfg.n_ctrl() * 3, rng);
      h.mask = Mlp2::random(d, d, grid_channels, rng);
      h.cls = Mlp2::random(d, d, cfg.n_classes, rng);
      p.heads.push_back(std::move(h));
    }
    for (std::size_t l = 0; l < n_blocks; ++l) {
      Rng rng = make_rng(cfg.seed, 2, l);
      DecoderLayerParams b;
      b.cross = DeformAttnParams::random(d, cfg.n_ctrl(), cfg.n_samples, grid_channels, rng);
      b.self_attn.n_heads = cfg.self_attn_heads;
      b.self_attn.q = Linear::random(d, d, rng);
      b.self_attn.k = Linear::random(d, d, rng);
      b.self_attn.v = Linear::random(d, d, rng);
      b.self_attn.o = Linear::random(d, d, rng);
      b.ffn_in = Linear::random(d, cfg.ffn_width, rng);
      b.ffn_out = Linear::random(cfg.ffn_width, d, rng);
      b.pos_proj = Linear::random(cfg.n_ctrl() * 2 * cfg.pos_feats(), d, rng);
      p.layers.push_back(std::move(b));
    }
    p.queries = Matrix(cfg.n_queries, d);
    Rng qrng = make_rng(cfg.seed, 3);
    for (double& v : p.queries.data()) v = normal(qrng, 0.0, 1.0);
    p.aux_queries = Matrix(cfg.n_queries * cfg.one_to_many_R, d);
    Rng arng = make_rng(cfg.seed, 4);
    for (double& v : p.aux_queries.data()) v = normal(arng, 0.0, 1.0);
    return p;
  }
};

/// Per-layer decoder state for Q' = Q * (1 + R) queries.
struct QueryState {
  std::size_t n_queries = 0;
  std::size_t d_model = 0;
  std::size_t n_ctrl = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t n_classes = 0;
  std::size_t mask_channels = 0;
  std::vector<double> embeddings;      // Q' x d
  std::vector<double> ctrl_norm;       // Q' x n_ctrl x 3, inside (0, 1)
  std::vector<double> pre_mask;        // Q' x H x W, accumulated logits
  std::vector<double> class_logits;    // Q' x n_classes
  std::vector<double> mask_embedding;  // Q' x C, this layer's contribution to pre_mask

  std::span<const double> embedding(std::size_t q) const { return {embeddings.data() + q * d_model, d_model}; }
  std::span<const double> logits(std::size_t q) const { return {class_logits.data() + q * n_classes, n_classes}; }
  std::span<const double> mask_logits(std::size_t q) const {
    return {pre_mask.data() + q * height * width, height * width};
  }

  ControlPointSet control_points(std::size_t q) const {
    std::vector<Point3> pts(n_ctrl);
    for (std::size_t n = 0; n < n_ctrl; ++n) {
      const double* c = ctrl_norm.data() + (q * n_ctrl + n) * 3;
      pts[n] = {c[0], c[1], c[2]};
    }
    return ControlPointSet(std::move(pts));
  }

  /// sigmoid of the pre-mask of query q.
  std::vector<double> mask_probability(std::size_t q) const {
    const auto m = mask_logits(q);
    std::vector<double> out(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = sigmoid(m[i]);
    return out;
  }

  std::vector<double> class_probabilities(std::size_t q) const {
    const auto l = logits(q);
    std::vector<double> p(l.begin(), l.end());
    softmax_inplace(p);
    return p;
  }
};

/// Sinusoidal encoding of every coordinate (temperature 10000, scale 2*pi), interleaved
/// [sin f0, cos f0, sin f1, cos f1, ...] per coordinate and concatenated over coordinates.
inline std::vector<double> sine_encoding(std::span<const double> coords, std::size_t pos_feats) {
  constexpr double kTwoPi = 6.283185307179586;
  std::vector<double> out(coords.size() * pos_feats);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    for (std::size_t f = 0; f < pos_feats / 2; ++f) {
      const double dim_t = std::pow(10000.0, 2.0 * static_cast<double>(f) / static_cast<double>(pos_feats));
      const double a = coords[i] * kTwoPi / dim_t;
      out[i * pos_feats + 2 * f] = std::sin(a);
      out[i * pos_feats + 2 * f + 1] = std::cos(a);
    }
  }
  return out;
}

/// refs: Q x n_ctrl x 2 (flat). Returns Q x d.
inline Matrix positional_embedding(std::span<const double> refs, std::size_t n_queries, std::size_t n_ctrl,
                                   std::size_t pos_feats, const Linear& proj) {
  if (refs.size() != n_queries * n_ctrl * 2) throw ShapeError("positional_embedding: refs size mismatch");
  Matrix out(n_queries, proj.out);
  for (std::size_t q = 0; q < n_queries; ++q) {
    const auto enc = sine_encoding(refs.subspan(q * n_ctrl * 2, n_ctrl * 2), pos_feats);
    proj.apply(enc, out.row(q));
  }
  return out;
}

/// (Q + Q*R)^2 additive mask: 0 within the one-to-one and one-to-many blocks, -inf across.
inline Matrix one_to_many_mask(std::size_t n_queries, std::size_t repetitions) {
  const std::size_t total = n_queries * (1 + repetitions);
  Matrix m(total, total, 0.0);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < total; ++i)
    for (std::size_t j = 0; j < total; ++j)
      if ((i < n_queries) != (j < n_queries)) m(i, j) = neg_inf;
  return m;
}

/// Multi-head self-attention; masked (-inf) pairs are skipped entirely.
inline Matrix self_attention(const Matrix& x, const Matrix& pos, const Matrix& mask, const SelfAttnParams& p) {
  const std::size_t n = x.rows(), d = x.cols(), dh = d / p.n_heads;
  Matrix q(n, d), k(n, d), v(n, d);
  std::vector<double> qk_in(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) qk_in[c] = x(i, c) + pos(i, c);
    p.q.apply(qk_in, q.row(i));
    p.k.apply(qk_in, k.row(i));
    p.v.apply(x.row(i), v.row(i));
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix out(n, d);
  std::vector<double> mixed(d);
  std::vector<std::size_t> allowed;
  std::vector<double> w;
  for (std::size_t i = 0; i < n; ++i) {
    allowed.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (std::isfinite(mask(i, j))) allowed.push_back(j);
    for (double& m : mixed) m = 0.0;
    for (std::size_t h = 0; h < p.n_heads; ++h) {
      w.assign(allowed.size(), 0.0);
      for (std::size_t a = 0; a < allowed.size(); ++a) {
        const std::size_t j = allowed[a];
        double s = 0.0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) s += q(i, c) * k(j, c);
        w[a] = s * inv_sqrt + mask(i, j);
      }
      softmax_inplace(w);
      for (std::size_t a = 0; a < allowed.size(); ++a)
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) mixed[c] += w[a] * v(allowed[a], c);
    }
    p.o.apply(mixed, out.row(i));
  }
  return out;
}

/// sigmoid(inverse_sigmoid(c) + delta), element-wise.
inline double refine_coordinate(double c, double delta) { return sigmoid(inverse_sigmoid(c) + delta); }

/// F_mask . E_mask for every query: out[q][cell] = sum_ch F[cell][ch] * E[q][ch].
inline std::vector<double> mask_contribution(const FeatureGrid& mask_features, std::span<const double> mask_embedding,
                                             std::size_t n_queries) {
  const std::size_t cells = mask_features.height() * mask_features.width();
  const std::size_t C = mask_features.channels();
  if (mask_embedding.size() != n_queries * C) throw ShapeError("mask_contribution: embedding size mismatch");
  std::vector<double> out(n_queries * cells);
  const double* f = mask_features.data().data();
  for (std::size_t q = 0; q < n_queries; ++q) {
    const double* e = mask_embedding.data() + q * C;
    for (std::size_t cell = 0; cell < cells; ++cell) {
      const double* fc = f + cell * C;
      double s = 0.0;
      for (std::size_t ch = 0; ch < C; ++ch) s += fc[ch] * e[ch];
      out[q * cells + cell] = s;
    }
  }
  return out;
}

namespace detail {

inline QueryState empty_state(const DecoderParams& params, const FeatureGrid& grid) {
  const DecoderConfig& cfg = params.config;
  QueryState s;
  s.n_queries = cfg.total_queries();
  s.d_model = cfg.d_model;
  s.n_ctrl = cfg.n_ctrl();
  s.height = grid.height();
  s.width = grid.width();
  s.n_classes = cfg.n_classes;
  s.mask_channels = grid.channels();
  return s;
}

inline void apply_heads(QueryState& s, const PredictionHeads& heads, const FeatureGrid& grid, bool refine) {
  const std::size_t Q = s.n_queries, d = s.d_model, nc = s.n_ctrl * 3, C = s.mask_channels;
  std::vector<double> ctrl(nc);
  s.mask_embedding.assign(Q * C, 0.0);
  s.class_logits.assign(Q * s.n_classes, 0.0);
  if (!refine) s.ctrl_norm.assign(Q * nc, 0.0);
  for (std::size_t q = 0; q < Q; ++q) {
    const std::span<const double> e(s.embeddings.data() + q * d, d);
    heads.ctrl.apply(e, ctrl);
    double* c = s.ctrl_norm.data() + q * nc;
    for (std::size_t i = 0; i < nc; ++i) c[i] = refine ? refine_coordinate(c[i], ctrl[i]) : sigmoid(ctrl[i]);
    heads.mask.apply(e, std::span<double>(s.mask_embedding.data() + q * C, C));
    heads.cls.apply(e, std::span<double>(s.class_logits.data() + q * s.n_classes, s.n_classes));
  }
  const std::vector<double> contribution = mask_contribution(grid, s.mask_embedding, Q);
  if (refine) {
    for (std::size_t i = 0; i < contribution.size(); ++i) s.pre_mask[i] += contribution[i];
  } else {
    s.pre_mask = contribution;
  }
}

inline void check_state_finite(const QueryState& s, std::size_t layer) {
  if (!all_finite(s.embeddings) || !all_finite(s.ctrl_norm) || !all_finite(s.pre_mask) ||
      !all_finite(s.class_logits))
    throw NumericError("decoder produced a non-finite value", layer);
}

}  // namespace detail

/// Initial prediction from the learnable query embeddings (one-to-one block first).
inline QueryState init_layer(const DecoderParams& params, const FeatureGrid& grid) {
  if (grid.channels() != params.grid_channels) throw ShapeError("init_layer: grid channels != decoder mask channels");
  QueryState s = detail::empty_state(params, grid);
  s.embeddings = params.queries.data();
  s.embeddings.insert(s.embeddings.end(), params.aux_queries.data().begin(), params.aux_queries.data().end());
  detail::apply_heads(s, params.heads_for(0), grid, false);
  detail::check_state_finite(s, 0);
  return s;
}

/// One refinement layer (layer_index >= 1). `values` is the layer's projected value field.
inline QueryState decoder_layer(const QueryState& state, const FeatureGrid& grid, const ValueField& values,
                                const DecoderParams& params, std::size_t layer_index) {
  if (layer_index < 1 || layer_index > params.config.n_layers) throw ShapeError("decoder_layer: bad layer index");
  const DecoderConfig& cfg = params.config;
  const DecoderLayerParams& block = params.layer_for(layer_index);
  const std::size_t Q = state.n_queries, d = state.d_model, nctrl = state.n_ctrl;

  std::vector<double> refs(Q * nctrl * 2);
  for (std::size_t q = 0; q < Q; ++q)
    for (std::size_t n = 0; n < nctrl; ++n) {
      refs[(q * nctrl + n) * 2] = state.ctrl_norm[(q * nctrl + n) * 3];
      refs[(q * nctrl + n) * 2 + 1] = state.ctrl_norm[(q * nctrl + n) * 3 + 1];
    }
  const Matrix pos = positional_embedding(refs, Q, nctrl, cfg.pos_feats(), block.pos_proj);

  Matrix x1(Q, d);
  std::vector<double> query(d);
  std::vector<SamplePoint> anchors(nctrl);
  for (std::size_t q = 0; q < Q; ++q) {
    const auto e = state.embedding(q);
    for (std::size_t c = 0; c < d; ++c) query[c] = e[c] + pos(q, c);
    for (std::size_t n = 0; n < nctrl; ++n) anchors[n] = {refs[(q * nctrl + n) * 2], refs[(q * nctrl + n) * 2 + 1]};
    const std::vector<double> a = deformable_attention(query, values, anchors, block.cross);
    for (std::size_t c = 0; c < d; ++c) x1(q, c) = e[c] + a[c];
    layer_norm_inplace(x1.row(q));
  }

  const Matrix mask = one_to_many_mask(cfg.n_queries, cfg.one_to_many_R);
  const Matrix sa = self_attention(x1, pos, mask, block.self_attn);
  Matrix x2(Q, d);
  for (std::size_t q = 0; q < Q; ++q) {
    for (std::size_t c = 0; c < d; ++c) x2(q, c) = x1(q, c) + sa(q, c);
    layer_norm_inplace(x2.row(q));
  }

  QueryState next = state;
  std::vector<double> hidden(block.ffn_in.out);
  std::vector<double> ffn(d);
  for (std::size_t q = 0; q < Q; ++q) {
    block.ffn_in.apply(x2.row(q), hidden);
    for (double& h : hidden) h = std::max(h, 0.0);
    block.ffn_out.apply(hidden, ffn);
    double* e = next.embeddings.data() + q * d;
    for (std::size_t c = 0; c < d; ++c) e[c] = x2(q, c) + ffn[c];
    layer_norm_inplace(std::span<double>(e, d));
  }
  detail::apply_heads(next, params.heads_for(layer_index), grid, true);
  detail::check_state_finite(next, layer_index);
  return next;
}

inline QueryState decoder_layer(const QueryState& state, const FeatureGrid& grid, const DecoderParams& params,
                                std::size_t layer_index) {
  return decoder_layer(state, grid, project_values(grid, params.layer_for(layer_index).cross), params, layer_index);
}

/// All states: index 0 is the initial prediction, index l the output of layer l.
inline std::vector<QueryState> run_decoder(const DecoderParams& params, const FeatureGrid& grid) {
  params.config.validate();
  std::vector<QueryState> states;
  states.reserve(params.config.n_layers + 1);
  states.push_back(init_layer(params, grid));
  for (std::size_t l = 1; l <= params.config.n_layers; ++l) states.push_back(decoder_layer(states.back(), grid, params, l));
  return states;
}

}  // namespace topobda
