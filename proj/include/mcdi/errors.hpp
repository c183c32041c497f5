#pragma once

#include <stdexcept>
#include <string>

namespace mcdi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An invalid configuration object (network spec, schedule, config file).
class SpecError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace mcdi
