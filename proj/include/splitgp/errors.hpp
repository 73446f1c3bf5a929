#pragma once

#include <stdexcept>
#include <string>

namespace splitgp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition was violated by the caller (shape mismatch,
/// stale cache, empty input where one row is required, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Factorization or variance computation failed even after jitter.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

/// Data carries no spread to split along (all rows identical).
class DegenerateData : public Error {
 public:
  using Error::Error;
};

/// Prediction requested from a model with no observations.
class ModelEmpty : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or invalid dataset operation.
class DataError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace detail
}  // namespace splitgp
