#pragma once

#include <stdexcept>
#include <string>

namespace pyrhead {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A scalar argument outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition between two arguments.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed file or document.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace pyrhead
