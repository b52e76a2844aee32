#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "topobda/bezier.hpp"
#include "topobda/error.hpp"

namespace topobda {

inline constexpr int kCenterlineClass = 0;
inline constexpr int kNoCenterlineClass = 1;

struct GtInstance {
  ControlPointSet ctrl;           ///< normalized control points
  std::vector<std::uint8_t> mask; ///< H*W row-major, 1 = foreground
  int label = kCenterlineClass;
};

struct GroundTruth {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<GtInstance> instances;
  std::vector<std::uint8_t> adjacency;  ///< n*n row-major, adjacency[i*n+j] = 1 for edge i -> j

  std::size_t size() const noexcept { return instances.size(); }

  bool edge(std::size_t i, std::size_t j) const { return adjacency[i * instances.size() + j] != 0; }

  void validate() const {
    const std::size_t n = instances.size();
    if (adjacency.size() != n * n) throw ValidationError("GroundTruth: adjacency must be n x n");
    for (std::size_t i = 0; i < n; ++i)
      if (adjacency[i * n + i] != 0) throw ValidationError("GroundTruth: adjacency diagonal must be zero");
    for (const GtInstance& inst : instances)
      if (inst.mask.size() != height * width) throw ValidationError("GroundTruth: mask size != grid size");
  }
};

}  // namespace topobda
