#pragma once

// Bezier curves in Bernstein form: basis evaluation, the (L+1)x(N+1) basis
// matrix that turns control points into polyline points, and a least-squares
// fit used to produce ground-truth control points for synthetic scenes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "topobda/error.hpp"

namespace topobda {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Point2 xy() const { return {x, y}; }

  friend Point3 operator+(Point3 a, const Point3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Point3 operator-(Point3 a, const Point3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Point3 operator*(double s, const Point3& a) { return {s * a.x, s * a.y, s * a.z}; }
  friend bool operator==(const Point3&, const Point3&) = default;
};

inline double norm(const Point3& p) { return std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z); }
inline double distance(const Point3& a, const Point3& b) { return norm(a - b); }

/// N+1 control points of an order-N Bezier curve.
class ControlPointSet {
 public:
  ControlPointSet() = default;
  explicit ControlPointSet(std::vector<Point3> points) : points_(std::move(points)) {
    if (points_.size() < 2) throw ShapeError("ControlPointSet needs at least 2 points (order >= 1)");
  }

  std::size_t order() const noexcept { return points_.size() - 1; }
  std::size_t size() const noexcept { return points_.size(); }
  const Point3& operator[](std::size_t i) const { return points_[i]; }
  Point3& operator[](std::size_t i) { return points_[i]; }
  const std::vector<Point3>& points() const noexcept { return points_; }

  /// True when every coordinate lies in [0, 1].
  bool is_normalized() const {
    return std::all_of(points_.begin(), points_.end(), [](const Point3& p) {
      return p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0 && p.z >= 0.0 && p.z <= 1.0;
    });
  }

  friend bool operator==(const ControlPointSet&, const ControlPointSet&) = default;

 private:
  std::vector<Point3> points_;
};

/// Ordered point sequence; direction matters.
class Polyline {
 public:
  Polyline() = default;
  explicit Polyline(std::vector<Point3> points) : points_(std::move(points)) {
    if (points_.size() < 2) throw ShapeError("Polyline needs at least 2 points");
  }

  std::size_t size() const noexcept { return points_.size(); }
  const Point3& operator[](std::size_t i) const { return points_[i]; }
  const Point3& front() const { return points_.front(); }
  const Point3& back() const { return points_.back(); }
  const std::vector<Point3>& points() const noexcept { return points_; }

  Polyline reversed() const { return Polyline({points_.rbegin(), points_.rend()}); }

  double length() const {
    double total = 0.0;
    for (std::size_t i = 1; i < points_.size(); ++i) total += distance(points_[i - 1], points_[i]);
    return total;
  }

  friend bool operator==(const Polyline&, const Polyline&) = default;

 private:
  std::vector<Point3> points_;
};

/// C(n, k) by the multiplicative recurrence; exact in double for n <= 20.
inline double binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double c = 1.0;
  for (std::size_t i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
  return c;
}

namespace detail {
inline double ipow(double base, std::size_t e) {
  double r = 1.0;
  for (std::size_t i = 0; i < e; ++i) r *= base;
  return r;
}
}  // namespace detail

/// B_{n,N}(t) = C(N,n) t^n (1-t)^(N-n).
inline double bernstein_basis(std::size_t n, std::size_t order, double t) {
  if (n > order) throw DomainError("bernstein_basis: index n exceeds order");
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("bernstein_basis: t outside [0, 1]");
  return binomial(order, n) * detail::ipow(t, n) * detail::ipow(1.0 - t, order - n);
}

class BernsteinMatrix {
 public:
  BernsteinMatrix(std::size_t order, std::vector<double> t_values)
      : order_(order), t_(std::move(t_values)), entries_(t_.size() * (order + 1)) {
    if (order < 1) throw DomainError("BernsteinMatrix: order must be >= 1");
    for (std::size_t l = 0; l < t_.size(); ++l)
      for (std::size_t n = 0; n <= order_; ++n) entries_[l * (order_ + 1) + n] = bernstein_basis(n, order_, t_[l]);
  }

  std::size_t rows() const noexcept { return t_.size(); }
  std::size_t cols() const noexcept { return order_ + 1; }
  std::size_t order() const noexcept { return order_; }
  double operator()(std::size_t l, std::size_t n) const { return entries_[l * (order_ + 1) + n]; }
  const std::vector<double>& t_values() const noexcept { return t_; }

  /// P = B C applied per coordinate channel.
  std::vector<Point3> apply(std::span<const Point3> ctrl) const {
    if (ctrl.size() != cols()) throw ShapeError("BernsteinMatrix: control point count does not match order");
    std::vector<Point3> out(rows());
    for (std::size_t l = 0; l < rows(); ++l) {
      Point3 acc;
      for (std::size_t n = 0; n < cols(); ++n) {
        const double b = (*this)(l, n);
        acc.x += b * ctrl[n].x;
        acc.y += b * ctrl[n].y;
        acc.z += b * ctrl[n].z;
      }
      out[l] = acc;
    }
    return out;
  }

 private:
  std::size_t order_;
  std::vector<double> t_;
  std::vector<double> entries_;
};

inline std::vector<double> uniform_parameters(std::size_t samples) {
  std::vector<double> t(samples + 1);
  for (std::size_t l = 0; l <= samples; ++l) t[l] = static_cast<double>(l) / static_cast<double>(samples);
  return t;
}

/// Basis matrix for L+1 uniformly spaced parameters t_l = l / L.
inline BernsteinMatrix bernstein_matrix(std::size_t order, std::size_t samples) {
  if (samples < 1) throw DomainError("bernstein_matrix: samples must be >= 1");
  return BernsteinMatrix(order, uniform_parameters(samples));
}

inline Point3 evaluate_curve(const ControlPointSet& ctrl, double t) {
  Point3 acc;
  for (std::size_t n = 0; n <= ctrl.order(); ++n) acc = acc + bernstein_basis(n, ctrl.order(), t) * ctrl[n];
  return acc;
}

/// L+1 points of the curve at uniform parameters.
inline Polyline sample_curve(const ControlPointSet& ctrl, std::size_t samples) {
  return Polyline(bernstein_matrix(ctrl.order(), samples).apply(ctrl.points()));
}

enum class Parameterization { uniform_index, chord_length };

namespace detail {

// Solves min ||A x - b||^2 column-wise for a tall A (rows x cols) by Householder QR.
// Returns false when A is numerically rank deficient.
inline bool least_squares(std::vector<double> a, std::size_t rows, std::size_t cols, std::vector<double>& rhs,
                          std::size_t rhs_cols) {
  auto A = [&](std::size_t r, std::size_t c) -> double& { return a[r * cols + c]; };
  auto B = [&](std::size_t r, std::size_t c) -> double& { return rhs[r * rhs_cols + c]; };
  std::vector<double> diag(cols);
  for (std::size_t k = 0; k < cols; ++k) {
    double nrm = 0.0;
    for (std::size_t r = k; r < rows; ++r) nrm += A(r, k) * A(r, k);
    nrm = std::sqrt(nrm);
    if (nrm == 0.0) return false;
    const double alpha = A(k, k) > 0 ? -nrm : nrm;
    std::vector<double> v(rows - k);
    for (std::size_t r = k; r < rows; ++r) v[r - k] = A(r, k);
    v[0] -= alpha;
    double vnorm2 = 0.0;
    for (double x : v) vnorm2 += x * x;
    if (vnorm2 > 0.0) {
      for (std::size_t c = k; c < cols; ++c) {
        double dot = 0.0;
        for (std::size_t r = k; r < rows; ++r) dot += v[r - k] * A(r, c);
        const double f = 2.0 * dot / vnorm2;
        for (std::size_t r = k; r < rows; ++r) A(r, c) -= f * v[r - k];
      }
      for (std::size_t c = 0; c < rhs_cols; ++c) {
        double dot = 0.0;
        for (std::size_t r = k; r < rows; ++r) dot += v[r - k] * B(r, c);
        const double f = 2.0 * dot / vnorm2;
        for (std::size_t r = k; r < rows; ++r) B(r, c) -= f * v[r - k];
      }
    }
    diag[k] = A(k, k);
  }
  double largest = 0.0;
  for (double d : diag) largest = std::max(largest, std::abs(d));
  for (double d : diag)
    if (std::abs(d) <= 1e-12 * largest) return false;
  for (std::size_t c = 0; c < rhs_cols; ++c) {
    for (std::size_t k = cols; k-- > 0;) {
      double s = B(k, c);
      for (std::size_t j = k + 1; j < cols; ++j) s -= A(k, j) * B(j, c);
      B(k, c) = s / A(k, k);
    }
  }
  return true;
}

}  // namespace detail

/// Parameters assigned to polyline points before fitting.
inline std::vector<double> fit_parameters(const Polyline& poly, Parameterization mode) {
  const std::size_t last = poly.size() - 1;
  if (mode == Parameterization::uniform_index) return uniform_parameters(last);
  std::vector<double> t(poly.size(), 0.0);
  for (std::size_t i = 1; i < poly.size(); ++i) t[i] = t[i - 1] + distance(poly[i - 1], poly[i]);
  const double total = t.back();
  if (total <= 0.0) return uniform_parameters(last);
  for (double& v : t) v /= total;
  t.back() = 1.0;
  return t;
}

/// argmin_C ||B C - P||^2. Uniform-index parameters make the fit an exact inverse of sample_curve.
inline ControlPointSet fit_control_points(const Polyline& poly, std::size_t order,
                                          Parameterization mode = Parameterization::uniform_index) {
  if (order < 1) throw FitError("fit_control_points: order must be >= 1");
  if (poly.size() < order + 1)
    throw FitError("fit_control_points: need at least " + std::to_string(order + 1) + " points, got " +
                   std::to_string(poly.size()));
  if (poly.length() == 0.0) throw FitError("fit_control_points: degenerate polyline (all points coincide)");

  const BernsteinMatrix basis(order, fit_parameters(poly, mode));
  const std::size_t rows = basis.rows();
  const std::size_t cols = basis.cols();
  std::vector<double> a(rows * cols);
  for (std::size_t l = 0; l < rows; ++l)
    for (std::size_t n = 0; n < cols; ++n) a[l * cols + n] = basis(l, n);
  std::vector<double> rhs(rows * 3);
  for (std::size_t l = 0; l < rows; ++l)
    for (std::size_t d = 0; d < 3; ++d) rhs[l * 3 + d] = poly[l][d];

  if (!detail::least_squares(std::move(a), rows, cols, rhs, 3))
    throw FitError("fit_control_points: rank-deficient system (duplicate or degenerate parameters)");

  std::vector<Point3> ctrl(cols);
  for (std::size_t n = 0; n < cols; ++n) ctrl[n] = {rhs[n * 3], rhs[n * 3 + 1], rhs[n * 3 + 2]};
  return ControlPointSet(std::move(ctrl));
}

}  // namespace topobda
