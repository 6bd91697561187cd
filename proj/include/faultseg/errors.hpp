#pragma once

#include <stdexcept>

namespace faultseg {

/// Invalid configuration value or combination (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent data (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable file contents: bad magic, truncation, oversized dimensions.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// Operand shapes disagree; the message names the offending axis.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced or received a non-finite value (CLI exit code 4).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training was aborted after repeated non-finite losses.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace faultseg
