#pragma once

#include <stdexcept>
#include <string>

namespace metaopt {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller passed something that violates a precondition (bad shape, bad
// enum value, out-of-range index, ...).
struct InvalidArgument : Error {
  using Error::Error;
};

// A computation left the realm of finite, usable numbers: NaN/inf iterates,
// singular solves without regularization, all rollouts diverged, etc.
struct NumericalError : Error {
  using Error::Error;
};

// Problems with config files or CLI arguments. Maps to exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

// File I/O and serialization failures (missing files, bad magic, truncation).
struct IoError : Error {
  using Error::Error;
};

}  // namespace metaopt
