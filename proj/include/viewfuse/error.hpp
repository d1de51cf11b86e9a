#pragma once

#include <stdexcept>
#include <string>

namespace viewfuse {

// Base of every error raised by the library. The CLI maps each subclass to a
// distinct exit code (see README).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree. The message names the offending dimension.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff graph: non-scalar loss, repeated backward, cycle.
class GraphError : public Error {
 public:
  using Error::Error;
};

// A non-finite value appeared where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or calibration content.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing or unreadable file, malformed on-disk layout.
class IoError : public Error {
 public:
  using Error::Error;
};

// Training loss became non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Checkpoint does not match the configuration it is loaded under.
class CheckpointMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace viewfuse
