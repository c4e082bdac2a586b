#pragma once

#include <stdexcept>
#include <string>

namespace crispedge {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or map shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation (log of a non-positive value, zero dice denominator).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Violated precondition that is not a shape problem.
class ContractError : public Error {
 public:
  using Error::Error;
};

class TopologyError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents. The message names the byte offset.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed file whose contents violate a value constraint.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// File missing, unreadable or unwritable.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss during training.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Unknown or invalid configuration key/value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace crispedge
