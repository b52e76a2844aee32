#pragma once

#include <cstdint>

namespace topobda {

/// Deterministic work counters for one forward call. Counters only grow.
struct OpCounter {
  std::uint64_t multiply_accumulates = 0;
  std::uint64_t sample_calls = 0;
  std::uint64_t matmul_calls = 0;

  void add_matmul(std::uint64_t macs) {
    multiply_accumulates += macs;
    ++matmul_calls;
  }

  OpCounter& operator+=(const OpCounter& other) {
    multiply_accumulates += other.multiply_accumulates;
    sample_calls += other.sample_calls;
    matmul_calls += other.matmul_calls;
    return *this;
  }

  friend bool operator==(const OpCounter&, const OpCounter&) = default;
};

inline OpCounter operator+(OpCounter a, const OpCounter& b) { return a += b; }

}  // namespace topobda
