#pragma once

#include <stdexcept>
#include <string>

namespace reshape {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or image dimensions do not match what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid keypoint geometry: bad edge indices, non-finite coordinates,
/// points outside the allowed margins, or failed extraction.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Configuration file or schema violation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File read/write failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value where a finite one is required (diverged training,
/// invalid covariance, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace reshape
