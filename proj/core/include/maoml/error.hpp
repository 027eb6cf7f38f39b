#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace maoml {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An operation was applied outside its mathematical domain (e.g. log of 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// API misuse: non-scalar backward, finished tape, mixing tapes, ...
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument values (label out of range, empty inputs, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A CORN batch in which every conditional subset is empty.
class DegenerateBatchError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Inconsistent or unsupported configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing or unreadable input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents; carries the byte offset of the failure.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace maoml
