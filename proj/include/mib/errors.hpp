#pragma once

#include <stdexcept>
#include <string>

namespace mib {

// Error taxonomy shared across the library. The CLI maps these onto its
// documented exit codes; everything derives from std::runtime_error so
// library users can catch broadly.

// Invalid or inconsistent configuration (model/sampler/training/run files).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Ingestion problems: malformed CSV/JSON, missing columns, bad values.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor dimension mismatches; messages always name the offending shapes.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated operation precondition (non-scalar backward seed, gap before the
// first key-frame, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: NaN loss, divergence.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Degenerate geometric input (zero-length or parallel ortho6D vectors).
struct DegeneracyError : NumericError {
  explicit DegeneracyError(const std::string& msg) : NumericError(msg) {}
};

// Key/missing frame pattern a predictor cannot serve (e.g. interpolation
// with no trailing key-frame).
struct TaskError : std::runtime_error {
  explicit TaskError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mib
