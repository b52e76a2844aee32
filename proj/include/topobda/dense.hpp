#pragma once

// Small dense building blocks: a row-major matrix, linear maps and two-layer
// perceptrons. Loops are written out so that every output row is computed by
// the same instruction sequence regardless of how many rows are processed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "topobda/error.hpp"
#include "topobda/op_counter.hpp"
#include "topobda/random.hpp"

namespace topobda {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline constexpr double kInverseSigmoidEps = 1e-5;

/// Inverse sigmoid with the argument clamped to [eps, 1 - eps].
inline double inverse_sigmoid(double p, double eps = kInverseSigmoidEps) {
  const double x = std::clamp(p, eps, 1.0 - eps);
  return std::log(x / (1.0 - x));
}

/// Numerically stable in-place softmax. Entries equal to -inf receive weight 0.
inline void softmax_inplace(std::span<double> v) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double x : v) peak = std::max(peak, x);
  double total = 0.0;
  for (double& x : v) {
    x = std::exp(x - peak);
    total += x;
  }
  for (double& x : v) x /= total;
}

inline void layer_norm_inplace(std::span<double> v, double eps = 1e-5) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  const double inv = 1.0 / std::sqrt(var + eps);
  for (double& x : v) x = (x - mean) * inv;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Affine map y = W x + b with W stored out x in, row-major.
struct Linear {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  static Linear zeros(std::size_t in, std::size_t out) {
    return Linear{in, out, std::vector<double>(in * out, 0.0), std::vector<double>(out, 0.0)};
  }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static Linear random(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0) {
    Linear l = zeros(in, out);
    const double bound = gain / std::sqrt(static_cast<double>(in));
    for (double& w : l.weight) w = uniform(rng, -bound, bound);
    for (double& b : l.bias) b = uniform(rng, -bound, bound);
    return l;
  }

  static Linear identity(std::size_t n) {
    Linear l = zeros(n, n);
    for (std::size_t i = 0; i < n; ++i) l.weight[i * n + i] = 1.0;
    return l;
  }

  double w(std::size_t o, std::size_t i) const { return weight[o * in + i]; }

  void apply(std::span<const double> x, std::span<double> y, OpCounter* ops = nullptr) const {
    if (x.size() != in || y.size() != out) throw ShapeError("Linear: input/output size mismatch");
    for (std::size_t o = 0; o < out; ++o) {
      const double* row = weight.data() + o * in;
      double acc = bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
      y[o] = acc;
    }
    if (ops) ops->add_matmul(static_cast<std::uint64_t>(in) * out);
  }

  std::vector<double> operator()(std::span<const double> x, OpCounter* ops = nullptr) const {
    std::vector<double> y(out);
    apply(x, y, ops);
    return y;
  }

  /// x-gradient of a scalar whose gradient w.r.t. y is `grad_y`: W^T grad_y.
  std::vector<double> backward_input(std::span<const double> grad_y) const {
    std::vector<double> gx(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double* row = weight.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) gx[i] += row[i] * grad_y[o];
    }
    return gx;
  }
};

/// Two-layer perceptron: out(relu(hidden(x))).
struct Mlp2 {
  Linear hidden;
  Linear output;

  static Mlp2 random(std::size_t in, std::size_t width, std::size_t out, Rng& rng) {
    Mlp2 m;
    m.hidden = Linear::random(in, width, rng);
    m.output = Linear::random(width, out, rng);
    return m;
  }

  static Mlp2 zeros(std::size_t in, std::size_t width, std::size_t out) {
    return Mlp2{Linear::zeros(in, width), Linear::zeros(width, out)};
  }

  std::size_t in() const { return hidden.in; }
  std::size_t out() const { return output.out; }

  void apply(std::span<const double> x, std::span<double> y, OpCounter* ops = nullptr) const {
    std::vector<double> h(hidden.out);
    hidden.apply(x, h, ops);
    for (double& v : h) v = std::max(v, 0.0);
    output.apply(h, y, ops);
  }

  std::vector<double> operator()(std::span<const double> x, OpCounter* ops = nullptr) const {
    std::vector<double> y(output.out);
    apply(x, y, ops);
    return y;
  }
};

}  // namespace topobda
