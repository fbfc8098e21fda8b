#pragma once

#include <stdexcept>
#include <string>

namespace foginv {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape/rank violations. Message names the offending shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Numeric-domain violations: log of non-positive value, asymmetric Gram
// input, zero-norm factor in a cosine distance.
struct DomainError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Non-finite loss during training; carries the iteration index in the message.
struct TrainAbort : Error {
  using Error::Error;
};

// Gradient-check battery failure; carries the failing case name.
struct VerifyError : Error {
  using Error::Error;
};

}  // namespace foginv
