#pragma once

#include <stdexcept>
#include <string>

namespace fmla {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad hyperparameters, malformed config files, unknown keys.
struct ConfigError : Error {
  using Error::Error;
};

// Unreadable or malformed input data (datasets, labels).
struct DataError : Error {
  using Error::Error;
};

// Tensor shape mismatches; the message names both shapes.
struct DimensionError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// Violated value-level preconditions (e.g. unnormalized distributions).
struct ValidationError : Error {
  using Error::Error;
};

}  // namespace fmla
