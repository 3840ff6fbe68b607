#pragma once

#include <stdexcept>
#include <string>

namespace kno {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (shape mismatch, bad argument, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// A computation produced non-finite values or otherwise failed numerically.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, long node_id = -1)
      : Error(what), node_id(node_id) {}
  long node_id;  // tape node where the problem surfaced, -1 if not applicable
};

/// A linear solve or factorization failed due to conditioning.
class ConditioningError : public Error {
 public:
  explicit ConditioningError(const std::string& what, double min_pivot = 0.0)
      : Error(what), min_pivot(min_pivot) {}
  double min_pivot;
};

/// File or stream I/O failure, message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace kno
