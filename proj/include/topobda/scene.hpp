#pragma once

// Synthetic bird's-eye-view scenes: random Bezier centerlines that chain through shared
// endpoints, their rasterized instance masks, and a feature grid holding smoothed distance
// fields of the centerlines plus Gaussian noise.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "topobda/bezier.hpp"
#include "topobda/error.hpp"
#include "topobda/grid.hpp"
#include "topobda/ground_truth.hpp"
#include "topobda/random.hpp"

namespace topobda {

inline constexpr double kDefaultMaskWidthCells = 4.0;
inline constexpr std::size_t kRasterSamples = 64;
inline constexpr double kHeightRangeM = 20.0;  // normalized z spans [-10 m, 10 m]

struct GridSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  double cell_m = 0.5;

  static GridSpec desk() { return {}; }
  static GridSpec paper_scale() { return {200, 104, 0.5}; }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct Scene {
  GridSpec grid;
  GroundTruth gt;
  FeatureGrid features;
  std::uint64_t seed = 0;
};

/// Normalized curve coordinates to meters.
inline Point3 to_metric(const Point3& p, const GridSpec& spec) {
  return {p.x * static_cast<double>(spec.width) * spec.cell_m, p.y * static_cast<double>(spec.height) * spec.cell_m,
          (p.z - 0.5) * kHeightRangeM};
}

inline Polyline to_metric(const Polyline& poly, const GridSpec& spec) {
  std::vector<Point3> pts;
  pts.reserve(poly.points().size());
  for (const Point3& p : poly.points()) pts.push_back(to_metric(p, spec));
  return Polyline(std::move(pts));
}

namespace detail {

/// Distance from (px, py) to segment a-b, all in cell units.
inline double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = ax + t * dx - px, ey = ay + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

/// Per-cell distance (in cells) from cell centers to a normalized polyline, row-major.
inline std::vector<double> cell_distances(std::span<const Point3> pts, std::size_t height, std::size_t width) {
  const double W = static_cast<double>(width), H = static_cast<double>(height);
  std::vector<double> out(height * width, std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const double px = static_cast<double>(c) + 0.5, py = static_cast<double>(r) + 0.5;
      double best = std::numeric_limits<double>::infinity();
      if (pts.size() == 1) {
        best = std::hypot(pts[0].x * W - px, pts[0].y * H - py);
      }
      for (std::size_t k = 0; k + 1 < pts.size(); ++k)
        best = std::min(best, point_segment_distance(px, py, pts[k].x * W, pts[k].y * H, pts[k + 1].x * W,
                                                     pts[k + 1].y * H));
      out[r * width + c] = best;
    }
  return out;
}

}  // namespace detail

/// Cell is foreground iff its center lies within width_cells / 2 of the polyline (normalized coordinates).
inline std::vector<std::uint8_t> rasterize_centerline(std::span<const Point3> poly, const GridSpec& spec,
                                                      double width_cells = kDefaultMaskWidthCells) {
  if (poly.empty()) throw DomainError("rasterize_centerline: empty polyline");
  if (!(width_cells >= 1.0)) throw DomainError("rasterize_centerline: width must be >= 1");
  const auto dist = detail::cell_distances(poly, spec.height, spec.width);
  std::vector<std::uint8_t> mask(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) mask[i] = dist[i] <= width_cells / 2.0 ? 1 : 0;
  return mask;
}

inline std::vector<std::uint8_t> rasterize_centerline(const Polyline& poly, const GridSpec& spec,
                                                      double width_cells = kDefaultMaskWidthCells) {
  return rasterize_centerline(std::span<const Point3>(poly.points()), spec, width_cells);
}

/// Alternating run lengths starting with a (possibly empty) run of zeros.
inline std::vector<std::size_t> rle_encode(std::span<const std::uint8_t> mask) {
  std::vector<std::size_t> runs;
  std::uint8_t current = 0;
  std::size_t count = 0;
  for (std::uint8_t v : mask) {
    const std::uint8_t b = v ? 1 : 0;
    if (b != current) {
      runs.push_back(count);
      current = b;
      count = 0;
    }
    ++count;
  }
  runs.push_back(count);
  return runs;
}

inline std::vector<std::uint8_t> rle_decode(std::span<const std::size_t> runs, std::size_t size) {
  std::vector<std::uint8_t> mask;
  mask.reserve(size);
  std::uint8_t value = 0;
  for (std::size_t r : runs) {
    if (mask.size() + r > size) throw ValidationError("rle_decode: runs exceed mask size");
    mask.insert(mask.end(), r, value);
    value ^= 1;
  }
  if (mask.size() != size) throw ValidationError("rle_decode: runs do not cover the mask");
  return mask;
}

/// adjacency(i, j) = 1 iff the end point of i coincides with the start point of j.
inline std::vector<std::uint8_t> endpoint_adjacency(std::span<const GtInstance> instances) {
  const std::size_t n = instances.size();
  std::vector<std::uint8_t> adj(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        const ControlPointSet& a = instances[i].ctrl;
        const ControlPointSet& b = instances[j].ctrl;
        if (distance(a[a.size() - 1], b[0]) == 0.0) adj[i * n + j] = 1;
      }
  return adj;
}

struct SceneOptions {
  GridSpec grid = GridSpec::desk();
  std::size_t channels = 32;
  double mask_width_cells = kDefaultMaskWidthCells;
  double field_sigma_cells = 2.0;
  double noise_sd = 0.05;
  double chain_probability = 0.5;
};

namespace detail {

inline ControlPointSet random_curve(Rng& rng, std::size_t order, const Point3* start) {
  constexpr double lo = 0.12, hi = 0.88;
  Point3 a = start ? *start : Point3{uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, 0.45, 0.55)};
  Point3 b;
  // Chord length at least a quarter of the extent so masks are not degenerate blobs.
  for (int attempt = 0; attempt < 64; ++attempt) {
    b = {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, 0.45, 0.55)};
    if (std::hypot(b.x - a.x, b.y - a.y) >= 0.25) break;
  }
  const double nx = -(b.y - a.y), ny = b.x - a.x;
  const double nlen = std::hypot(nx, ny);
  const double bend = uniform(rng, -0.15, 0.15);
  std::vector<Point3> pts(order + 1);
  for (std::size_t n = 0; n <= order; ++n) {
    const double t = static_cast<double>(n) / static_cast<double>(order);
    Point3 p = a + t * (b - a);
    if (n != 0 && n != order) {
      const double k = bend * 4.0 * t * (1.0 - t) / nlen;
      p.x = std::clamp(p.x + k * nx, 0.05, 0.95);
      p.y = std::clamp(p.y + k * ny, 0.05, 0.95);
    }
    pts[n] = p;
  }
  return ControlPointSet(std::move(pts));
}

}  // namespace detail

/// Feature grid: channel ch = sum_i a(ch, i) * exp(-d_i^2 / (2 sigma^2)) + noise, d_i in cells.
inline FeatureGrid synthesize_features(const GroundTruth& gt, const SceneOptions& opts, Rng& rng) {
  const std::size_t H = opts.grid.height, W = opts.grid.width, C = opts.channels, n = gt.size();
  std::vector<double> amp(C * n);
  for (double& a : amp) a = normal(rng, 0.0, 1.0);
  std::vector<std::vector<double>> fields;
  const double inv2s2 = 1.0 / (2.0 * opts.field_sigma_cells * opts.field_sigma_cells);
  for (const GtInstance& inst : gt.instances) {
    const Polyline poly = sample_curve(inst.ctrl, kRasterSamples);
    auto d = detail::cell_distances(poly.points(), H, W);
    for (double& v : d) v = std::exp(-v * v * inv2s2);
    fields.push_back(std::move(d));
  }
  std::vector<double> data(H * W * C);
  for (std::size_t cell = 0; cell < H * W; ++cell)
    for (std::size_t ch = 0; ch < C; ++ch) {
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) v += amp[ch * n + i] * fields[i][cell];
      data[cell * C + ch] = v + normal(rng, 0.0, opts.noise_sd);
    }
  return FeatureGrid(H, W, C, std::move(data), opts.grid.cell_m);
}

/// Random smooth centerlines; with probability chain_probability an instance starts at the end
/// point of an earlier one, which produces a GT adjacency edge.
inline Scene generate_scene(std::uint64_t seed, std::size_t n_instances, std::size_t order,
                            const SceneOptions& opts = {}) {
  if (order < 1) throw DomainError("generate_scene: order must be >= 1");
  Rng rng = make_rng(seed, 0x7363656eULL);
  Scene s;
  s.seed = seed;
  s.grid = opts.grid;
  s.gt.height = opts.grid.height;
  s.gt.width = opts.grid.width;
  for (std::size_t i = 0; i < n_instances; ++i) {
    ControlPointSet ctrl = [&] {
      if (i > 0 && uniform(rng, 0.0, 1.0) < opts.chain_probability) {
        const std::size_t k = static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(i))) % i;
        const ControlPointSet& prev = s.gt.instances[k].ctrl;
        const Point3 start = prev[prev.size() - 1];
        return detail::random_curve(rng, order, &start);
      }
      return detail::random_curve(rng, order, nullptr);
    }();
    GtInstance inst{ctrl, rasterize_centerline(sample_curve(ctrl, kRasterSamples), opts.grid, opts.mask_width_cells),
                    kCenterlineClass};
    s.gt.instances.push_back(std::move(inst));
  }
  s.gt.adjacency = endpoint_adjacency(s.gt.instances);
  s.gt.validate();
  s.features = synthesize_features(s.gt, opts, rng);
  return s;
}

}  // namespace topobda
