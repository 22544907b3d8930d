#pragma once

#include <stdexcept>

namespace mva {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor dimension disagreement; the message names the offending shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid or inconsistent configuration values.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed file contents (bad magic, truncated payload, bad rows).
struct ParseError : Error {
  using Error::Error;
};

// Filesystem-level failure (missing file, unwritable path).
struct IoError : Error {
  using Error::Error;
};

// Too few valid samples to compute a statistic.
struct InsufficientDataError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace mva
