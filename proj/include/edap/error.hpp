#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace edap {

/// Base for every error raised by the toolkit. `what()` carries a
/// human-readable message; subclasses identify the failure category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File bytes do not follow the expected layout (bad magic, truncated...).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A sample value is unusable (NaN/Inf). Carries the offending index.
class DataError : public Error {
 public:
  DataError(const std::string& msg, std::size_t index)
      : Error(msg + " (index " + std::to_string(index) + ")"), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DegenerateSignalError : public Error {
 public:
  using Error::Error;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Training loss became non-finite.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(std::size_t epoch)
      : Error("training diverged at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace edap
