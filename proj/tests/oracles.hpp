#pragma once

// Naive reference implementations used by the tests. They share no code with the library
// beyond plain data types, and are written for clarity rather than speed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "topobda/attention.hpp"
#include "topobda/bezier.hpp"
#include "topobda/dense.hpp"
#include "topobda/grid.hpp"

namespace oracle {

using namespace topobda;

inline double choose(std::size_t n, std::size_t k) {
  double f = 1.0;
  for (std::size_t i = 1; i <= n; ++i) f *= static_cast<double>(i);
  double g = 1.0;
  for (std::size_t i = 1; i <= k; ++i) g *= static_cast<double>(i);
  double h = 1.0;
  for (std::size_t i = 1; i <= n - k; ++i) h *= static_cast<double>(i);
  return f / (g * h);
}

inline Point3 bezier_point(const std::vector<Point3>& ctrl, double t) {
  const std::size_t N = ctrl.size() - 1;
  Point3 p{};
  for (std::size_t n = 0; n <= N; ++n) {
    const double b = choose(N, n) * std::pow(t, static_cast<double>(n)) * std::pow(1.0 - t, static_cast<double>(N - n));
    p.x += b * ctrl[n].x;
    p.y += b * ctrl[n].y;
    p.z += b * ctrl[n].z;
  }
  return p;
}

/// Reads grid value (r, c, ch), zero outside.
inline double grid_value(const FeatureGrid& g, long r, long c, std::size_t ch) {
  if (r < 0 || c < 0 || r >= static_cast<long>(g.height()) || c >= static_cast<long>(g.width())) return 0.0;
  return g.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), ch);
}

/// Bilinear read of one channel with align-corners-false and zero padding.
inline double bilinear(const FeatureGrid& g, double x, double y, std::size_t ch) {
  const double px = x * static_cast<double>(g.width()) - 0.5;
  const double py = y * static_cast<double>(g.height()) - 0.5;
  const long c0 = static_cast<long>(std::floor(px));
  const long r0 = static_cast<long>(std::floor(py));
  const double ax = px - static_cast<double>(c0);
  const double ay = py - static_cast<double>(r0);
  return (1 - ay) * (1 - ax) * grid_value(g, r0, c0, ch) + (1 - ay) * ax * grid_value(g, r0, c0 + 1, ch) +
         ay * (1 - ax) * grid_value(g, r0 + 1, c0, ch) + ay * ax * grid_value(g, r0 + 1, c0 + 1, ch);
}

inline std::vector<double> linear(const Linear& f, const std::vector<double>& x) {
  std::vector<double> y(f.out);
  for (std::size_t o = 0; o < f.out; ++o) {
    double s = f.bias[o];
    for (std::size_t i = 0; i < f.in; ++i) s += f.weight[o * f.in + i] * x[i];
    y[o] = s;
  }
  return y;
}

/// Deformable attention by explicit loops over heads and samples, from the raw grid.
inline std::vector<double> deformable(const std::vector<double>& q, const FeatureGrid& raw,
                                      const std::vector<SamplePoint>& refs, const DeformAttnParams& p) {
  const std::size_t M = p.n_heads, K = p.n_samples, d = p.d_model, dh = d / M;
  std::vector<double> projected;
  for (std::size_t r = 0; r < raw.height(); ++r)
    for (std::size_t c = 0; c < raw.width(); ++c) {
      std::vector<double> cell(raw.cell(r, c).begin(), raw.cell(r, c).end());
      const auto v = linear(p.value_proj, cell);
      projected.insert(projected.end(), v.begin(), v.end());
    }
  const FeatureGrid values(raw.height(), raw.width(), d, projected, raw.cell_size_m());
  const auto off = linear(p.sampling_offsets, q);
  const auto logit = linear(p.attention_weights, q);
  const double scale = 1.0 / static_cast<double>(std::max(raw.height(), raw.width()));
  std::vector<double> heads(d, 0.0);
  for (std::size_t m = 0; m < M; ++m) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, logit[m * K + k]);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(logit[m * K + k] - mx);
    for (std::size_t k = 0; k < K; ++k) {
      const double a = std::exp(logit[m * K + k] - mx) / z;
      const double x = refs[m].x + off[(m * K + k) * 2] * scale;
      const double y = refs[m].y + off[(m * K + k) * 2 + 1] * scale;
      for (std::size_t c = 0; c < dh; ++c) heads[m * dh + c] += a * bilinear(values, x, y, m * dh + c);
    }
  }
  return linear(p.output_proj, heads);
}

/// Dense single-head cross-attention by explicit loops.
inline std::vector<double> standard(const std::vector<double>& query, const FeatureGrid& raw,
                                    const CrossAttnParams& p) {
  const std::size_t d = p.d_model;
  const auto q = linear(p.query_proj, query);
  std::vector<std::vector<double>> keys, vals;
  for (std::size_t r = 0; r < raw.height(); ++r)
    for (std::size_t c = 0; c < raw.width(); ++c) {
      std::vector<double> cell(raw.cell(r, c).begin(), raw.cell(r, c).end());
      keys.push_back(linear(p.key_proj, cell));
      vals.push_back(linear(p.value_proj, cell));
    }
  std::vector<double> s(keys.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < keys.size(); ++j) {
    double dot = 0.0;
    for (std::size_t c = 0; c < d; ++c) dot += q[c] * keys[j][c];
    s[j] = dot / std::sqrt(static_cast<double>(d));
    mx = std::max(mx, s[j]);
  }
  double z = 0.0;
  for (double& v : s) z += (v = std::exp(v - mx));
  std::vector<double> mixed(d, 0.0);
  for (std::size_t j = 0; j < keys.size(); ++j)
    for (std::size_t c = 0; c < d; ++c) mixed[c] += s[j] / z * vals[j][c];
  return linear(p.output_proj, mixed);
}

/// Minimum total cost over all injective row/column pairings of size min(n, m).
inline double brute_force_assignment(const Matrix& cost) {
  const std::size_t n = cost.rows(), m = cost.cols();
  if (n == 0 || m == 0) return 0.0;
  const bool transpose = n > m;
  const std::size_t small = transpose ? m : n, large = transpose ? n : m;
  std::vector<std::size_t> perm(large);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < small; ++i) s += transpose ? cost(perm[i], i) : cost(i, perm[i]);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace oracle
