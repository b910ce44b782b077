#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace megdec {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Hyperparameters or run settings are inconsistent or under-specified.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside its mathematical domain (e.g. a sensor index).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Not enough samples to produce even one window/sample.
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API precondition (backward on a non-scalar, etc.).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// The requested operation is not supported by the object (e.g. no global attention).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or corrupted file; carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace megdec
