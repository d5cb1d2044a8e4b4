#pragma once

#include <stdexcept>
#include <string>

namespace bvxl {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or volume extents that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input data that is malformed, missing or inconsistent (files, manifests, labels).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A computation produced or would produce a non-finite value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument or configuration supplied by a caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace bvxl
