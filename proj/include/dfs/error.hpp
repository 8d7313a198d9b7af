#pragma once

#include <stdexcept>
#include <string>

namespace dfs {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape or dimension mismatch. Messages name the offending shapes.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration value (out-of-range hyperparameter, bad option set,
// malformed run config). CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// API misuse: backward on a non-scalar, double backward, etc.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Malformed external data (dataset files, checkpoints, CSV traces).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Numeric failure during training or inference (NaN/Inf, divergence).
// CLI maps this to exit code 3.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Invalid runtime input (e.g. label index out of class range).
class InputError : public Error {
 public:
  explicit InputError(const std::string& msg) : Error(msg) {}
};

}  // namespace dfs
