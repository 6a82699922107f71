#pragma once

#include <stdexcept>
#include <string>

namespace npdet {

// Base of every error the library raises. The CLI maps each subtype onto an
// exit code (usage 1, io 2, numerical 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or layer geometry that cannot be evaluated.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed manifest line; `line()` is 1-based.
class ManifestError : public Error {
 public:
  ManifestError(std::size_t line, const std::string& what)
      : Error("manifest line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class VersionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class ChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// NaN/Inf encountered during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// AP requested over a set with zero ground-truth boxes.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace npdet
