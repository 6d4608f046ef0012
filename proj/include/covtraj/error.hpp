#pragma once

#include <stdexcept>
#include <string>

namespace covtraj {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: shapes, ranges, malformed files, violated preconditions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Operands of incompatible dimension or anchored at different base points.
class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// An iterative method failed or a matrix that must be definite was not.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace covtraj
