#pragma once

#include <stdexcept>
#include <string>

namespace dilocox {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/parameter shape disagreement.
struct ShapeError : Error {
  using Error::Error;
};

// Bad argument, config value, or precondition violation.
struct ValidationError : Error {
  using Error::Error;
};

// Missing or unreadable files.
struct IoError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required (diverged runs).
struct NumericError : Error {
  using Error::Error;
};

// Malformed serialized payloads.
struct FormatError : Error {
  using Error::Error;
};

}  // namespace dilocox
