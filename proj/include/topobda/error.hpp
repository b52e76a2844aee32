#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace topobda {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (NaN input, t outside [0,1], ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Mismatched tensor / sequence sizes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Least-squares Bezier fit could not be solved (degenerate or too short input).
class FitError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared during a forward pass or an optimization loop.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t index)
      : Error(what + " (at index " + std::to_string(index) + ")"), index_(index) {}

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Malformed input file or violated file-level invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace topobda
