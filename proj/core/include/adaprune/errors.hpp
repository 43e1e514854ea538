#pragma once

#include <stdexcept>
#include <string>

namespace adaprune {

/// Tensor shape / dimension mismatch.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value (out-of-range hyperparameter, bad layer spec, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse: backward on a non-scalar, stepping a parameter without a
/// gradient, calling an operation outside its variant, ...
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input bytes (dataset files, decision logs, checkpoints).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing or unwritable files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Broken numeric invariant: NaN/Inf values, cost estimates outside their
/// admissible range, diverged losses.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace adaprune
