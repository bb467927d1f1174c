#pragma once

#include <stdexcept>
#include <string>

namespace ggnet {

/// Invalid configuration (bad key, bad value, inconsistent options). CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed or inconsistent data (files, payloads, masks). CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape mismatch between operands.
class ShapeError : public DataError {
 public:
  explicit ShapeError(const std::string& msg) : DataError(msg) {}
};

/// Numeric failure (non-finite values, divergence, undefined metric). CLI exit code 4.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ggnet
