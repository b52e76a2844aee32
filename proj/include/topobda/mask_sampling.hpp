#pragma once

// Point-sampled mask comparison shared by the matcher and the mask loss: K continuous points
// are drawn uniformly over the hull of cell centers, both maps are read bilinearly there, and
// the BCE mean and the dice term are computed on the sampled values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "topobda/grid.hpp"
#include "topobda/random.hpp"

namespace topobda {

inline constexpr double kDiceEps = 1e-6;
inline constexpr double kProbEps = 1e-12;

inline std::vector<SamplePoint> sample_mask_points(std::size_t count, std::size_t height, std::size_t width,
                                                   std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x6d61736bULL);
  const double x0 = 0.5 / static_cast<double>(width), x1 = 1.0 - x0;
  const double y0 = 0.5 / static_cast<double>(height), y1 = 1.0 - y0;
  std::vector<SamplePoint> pts(count);
  for (SamplePoint& p : pts) {
    p.x = uniform(rng, x0, x1);
    p.y = uniform(rng, y0, y1);
  }
  return pts;
}

/// Every cell center, row-major.
inline std::vector<SamplePoint> dense_mask_points(std::size_t height, std::size_t width) {
  std::vector<SamplePoint> pts;
  pts.reserve(height * width);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c)
      pts.push_back({(static_cast<double>(c) + 0.5) / static_cast<double>(width),
                     (static_cast<double>(r) + 0.5) / static_cast<double>(height)});
  return pts;
}

/// Bilinear read of a single-channel H x W map.
template <typename T>
double read_map(std::span<const T> map, std::size_t height, std::size_t width, SamplePoint p) {
  const BilinearStencil s = bilinear_stencil(height, width, p);
  double v = 0.0;
  for (const SampleTap& t : s.taps)
    if (t.in_bounds) v += t.weight * static_cast<double>(map[static_cast<std::size_t>(t.row) * width + t.col]);
  return v;
}

inline double binary_cross_entropy(double p, double target) {
  const double pc = std::clamp(p, kProbEps, 1.0 - kProbEps);
  return -(target * std::log(pc) + (1.0 - target) * std::log(1.0 - pc));
}

struct MaskTerms {
  double bce = 0.0;        ///< mean BCE over the sampled points
  double dice_loss = 0.0;  ///< 1 - 2 sum(p g) / (sum p + sum g + eps)

  double total() const { return bce + dice_loss; }
};

inline MaskTerms mask_terms(std::span<const double> prob, std::span<const double> target) {
  MaskTerms t;
  double inter = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t k = 0; k < prob.size(); ++k) {
    t.bce += binary_cross_entropy(prob[k], target[k]);
    inter += prob[k] * target[k];
    sp += prob[k];
    sg += target[k];
  }
  t.bce /= static_cast<double>(prob.size());
  t.dice_loss = 1.0 - 2.0 * inter / (sp + sg + kDiceEps);
  return t;
}

template <typename T>
std::vector<double> read_map_at(std::span<const T> map, std::size_t height, std::size_t width,
                                std::span<const SamplePoint> pts) {
  std::vector<double> out(pts.size());
  for (std::size_t k = 0; k < pts.size(); ++k) out[k] = read_map(map, height, width, pts[k]);
  return out;
}

}  // namespace topobda
