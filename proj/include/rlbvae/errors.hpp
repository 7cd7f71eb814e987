#pragma once

#include <stdexcept>
#include <string>

namespace rlbvae {

// Operand shapes do not conform.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A configuration value is outside its documented range.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A documented precondition of an operation does not hold.
struct PreconditionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Non-finite input, or a linear system that cannot be solved.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training diverged; the message carries a diagnostic snapshot.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// External dataset could not be read. The message names the offending row.
struct IngestionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Run logs could not be combined.
struct AggregationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint or artifact file is malformed or missing.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rlbvae
