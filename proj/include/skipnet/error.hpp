#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace skipnet {

// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A NaN or infinity reached a value that must stay finite (divergence).
class NonFiniteError : public ContractError {
 public:
  using ContractError::ContractError;
};

// The CTC target cannot be produced in the available number of frames
// (or an oracle was asked to enumerate too large an instance).
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

// Bad configuration: unknown key, invalid value, inconsistent artifacts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unsupported file contents. `line` is 1-based, 0 when the
// format is binary or the location is unknown.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace skipnet
