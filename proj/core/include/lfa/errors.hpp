#pragma once

#include <stdexcept>
#include <string>

namespace lfa {

// Tensor/layer shape or channel mismatches.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid architecture/run configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numeric-domain violations (probabilities out of range, empty counts, ...).
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dataset-level problems (empty manifest, missing entries).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite function value during gradient verification.
struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint payload failed its integrity check.
struct ChecksumError : IoError {
  using IoError::IoError;
};

// Checkpoint written by an incompatible format version.
struct VersionError : IoError {
  using IoError::IoError;
};

}  // namespace lfa
