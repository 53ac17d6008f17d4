#pragma once

#include <stdexcept>
#include <string>

namespace leafgraph {

// Base for every error the library raises. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor/layer dimension disagreement.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad bytes on disk or on the wire (magic, truncation, maxval, ...).
class FormatError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Inputs for which the operation has no defined answer (zero vectors, zero matrices).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or arguments; reported as a usage error.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or function value.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace leafgraph
