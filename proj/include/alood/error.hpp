#pragma once

#include <stdexcept>
#include <string>

namespace alood {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or channel counts.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent dataset, cache, or checkpoint content.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or missing paths.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, degenerate embeddings, stale tapes.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace alood
