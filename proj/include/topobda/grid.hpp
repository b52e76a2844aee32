#pragma once

// BEV feature grid and its bilinear sampler.
//
// Coordinates are normalized: x spans the width (columns), y spans the height
// (rows). Cell (r, c) has its center at x = (c + 0.5) / W, y = (r + 0.5) / H
// (align-corners-false). Neighbors that fall outside the grid read as zero.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "topobda/error.hpp"

namespace topobda {

struct SamplePoint {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const SamplePoint&, const SamplePoint&) = default;
};

class FeatureGrid {
 public:
  FeatureGrid() = default;
  FeatureGrid(std::size_t height, std::size_t width, std::size_t channels, std::vector<double> data,
              double cell_size_m = 0.5)
      : height_(height), width_(width), channels_(channels), cell_size_m_(cell_size_m), data_(std::move(data)) {
    if (height_ == 0 || width_ == 0 || channels_ == 0) throw ShapeError("FeatureGrid: dimensions must be >= 1");
    if (data_.size() != height_ * width_ * channels_) throw ShapeError("FeatureGrid: data length != H*W*C");
    for (double v : data_)
      if (!std::isfinite(v)) throw DomainError("FeatureGrid: non-finite value");
  }

  FeatureGrid(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0,
              double cell_size_m = 0.5)
      : FeatureGrid(height, width, channels, std::vector<double>(height * width * channels, fill), cell_size_m) {}

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  double cell_size_m() const noexcept { return cell_size_m_; }

  std::span<const double> cell(std::size_t r, std::size_t c) const {
    return {data_.data() + (r * width_ + c) * channels_, channels_};
  }
  std::span<double> cell(std::size_t r, std::size_t c) { return {data_.data() + (r * width_ + c) * channels_, channels_}; }

  double at(std::size_t r, std::size_t c, std::size_t ch) const { return data_[(r * width_ + c) * channels_ + ch]; }

  const std::vector<double>& data() const noexcept { return data_; }

  /// Center of cell (r, c) in normalized coordinates.
  SamplePoint cell_center(std::size_t r, std::size_t c) const {
    return {(static_cast<double>(c) + 0.5) / static_cast<double>(width_),
            (static_cast<double>(r) + 0.5) / static_cast<double>(height_)};
  }

  friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  double cell_size_m_ = 0.5;
  std::vector<double> data_;
};

/// One of the four bilinear neighbors of a sample.
struct SampleTap {
  long row = 0;
  long col = 0;
  double weight = 0.0;
  bool in_bounds = false;
};

/// Bilinear stencil of one sample point. d_weight_du/dv are derivatives of the
/// tap weights w.r.t. continuous cell coordinates (u along columns, v along rows).
struct BilinearStencil {
  std::array<SampleTap, 4> taps;
  std::array<double, 4> d_weight_du{};
  std::array<double, 4> d_weight_dv{};
};

inline BilinearStencil bilinear_stencil(std::size_t height, std::size_t width, SamplePoint p) {
  if (std::isnan(p.x) || std::isnan(p.y)) throw DomainError("bilinear sample: NaN coordinate");
  const double u = p.x * static_cast<double>(width) - 0.5;
  const double v = p.y * static_cast<double>(height) - 0.5;
  const double c0 = std::floor(u);
  const double r0 = std::floor(v);
  const double fu = u - c0;
  const double fv = v - r0;
  BilinearStencil s;
  const double wu[2] = {1.0 - fu, fu};
  const double wv[2] = {1.0 - fv, fv};
  const double du[2] = {-1.0, 1.0};
  for (int dr = 0; dr < 2; ++dr) {
    for (int dc = 0; dc < 2; ++dc) {
      const int k = dr * 2 + dc;
      SampleTap& t = s.taps[k];
      t.row = static_cast<long>(r0) + dr;
      t.col = static_cast<long>(c0) + dc;
      t.in_bounds = t.row >= 0 && t.col >= 0 && t.row < static_cast<long>(height) && t.col < static_cast<long>(width);
      t.weight = wv[dr] * wu[dc];
      s.d_weight_du[k] = wv[dr] * du[dc];
      s.d_weight_dv[k] = du[dr] * wu[dc];
    }
  }
  return s;
}

/// Bilinear read of channels [first, first + out.size()) at p. Adds to nothing; overwrites out.
inline void sample_channels(const FeatureGrid& grid, SamplePoint p, std::size_t first, std::span<double> out) {
  const BilinearStencil s = bilinear_stencil(grid.height(), grid.width(), p);
  for (double& o : out) o = 0.0;
  for (const SampleTap& t : s.taps) {
    if (!t.in_bounds) continue;
    const auto cell = grid.cell(static_cast<std::size_t>(t.row), static_cast<std::size_t>(t.col));
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += t.weight * cell[first + c];
  }
}

inline std::vector<double> bilinear_sample(const FeatureGrid& grid, SamplePoint p) {
  std::vector<double> out(grid.channels());
  sample_channels(grid, p, 0, out);
  return out;
}

/// One C-vector per input point.
inline std::vector<std::vector<double>> bilinear_sample(const FeatureGrid& grid, std::span<const SamplePoint> pts) {
  std::vector<std::vector<double>> out;
  out.reserve(pts.size());
  for (const SamplePoint& p : pts) out.push_back(bilinear_sample(grid, p));
  return out;
}

/// Analytic derivatives of one bilinear sample.
struct SampleGradient {
  std::vector<double> d_dx;  ///< d out[c] / d x, per channel
  std::vector<double> d_dy;  ///< d out[c] / d y, per channel
  /// d out[c] / d data[row, col, c] is taps[k].weight for every channel c (zero for out-of-bounds taps).
  std::array<SampleTap, 4> taps;
};

/// On a lattice line the floor convention yields the one-sided derivative from the right.
inline SampleGradient bilinear_sample_grad(const FeatureGrid& grid, SamplePoint p) {
  const BilinearStencil s = bilinear_stencil(grid.height(), grid.width(), p);
  SampleGradient g;
  g.d_dx.assign(grid.channels(), 0.0);
  g.d_dy.assign(grid.channels(), 0.0);
  g.taps = s.taps;
  const double sx = static_cast<double>(grid.width());
  const double sy = static_cast<double>(grid.height());
  for (std::size_t k = 0; k < 4; ++k) {
    const SampleTap& t = s.taps[k];
    if (!t.in_bounds) {
      g.taps[k].weight = 0.0;
      continue;
    }
    const auto cell = grid.cell(static_cast<std::size_t>(t.row), static_cast<std::size_t>(t.col));
    for (std::size_t c = 0; c < grid.channels(); ++c) {
      g.d_dx[c] += sx * s.d_weight_du[k] * cell[c];
      g.d_dy[c] += sy * s.d_weight_dv[k] * cell[c];
    }
  }
  return g;
}

inline std::vector<SampleGradient> bilinear_sample_grad(const FeatureGrid& grid, std::span<const SamplePoint> pts) {
  std::vector<SampleGradient> out;
  out.reserve(pts.size());
  for (const SamplePoint& p : pts) out.push_back(bilinear_sample_grad(grid, p));
  return out;
}

/// Distance (in cells) from p to the nearest lattice line of the sampler; kinks of the
/// piecewise-bilinear interpolant sit on these lines.
inline double lattice_margin(std::size_t height, std::size_t width, SamplePoint p) {
  const double u = p.x * static_cast<double>(width) - 0.5;
  const double v = p.y * static_cast<double>(height) - 0.5;
  auto frac_dist = [](double a) { return std::abs(a - std::round(a)); };
  return std::min(frac_dist(u), frac_dist(v));
}

}  // namespace topobda
