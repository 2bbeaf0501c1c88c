#pragma once

#include <stdexcept>
#include <string>

namespace uda {

/// Operand shapes are incompatible for the requested operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A forward operation produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition or phase-ordering contract was violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed file or configuration input.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

}  // namespace uda
