#pragma once

#include <stdexcept>
#include <string>

namespace rcn {

/// Base of every error raised by the library. `exit_code()` is the process
/// status the command-line tool reports for this category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Bad configuration, invalid arguments, inconsistent shapes.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class DimensionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Missing or malformed input data, unreadable files, protocol violations.
class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Non-finite values, out-of-range probabilities, failed gradient checks.
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

/// backward() invoked on a tape that has already been replayed.
class StaleTapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace rcn
