#pragma once

#include <stdexcept>
#include <string>

namespace unlearn {

// Root of every error raised by the toolkit. The CLI maps subclasses onto
// process exit codes (see cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Operation called in the wrong lifecycle state (backward before forward,
/// double attach, re-pruning, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Index out of its valid range (e.g. class label >= K).
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Unrecognized file layout: bad magic, bad version, wrong record size.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File layout is recognized but contents are inconsistent or truncated.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values produced by a numeric routine.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public NumericError {
 public:
  DivergenceError(int epoch, int batch, const std::string& what)
      : NumericError(what), epoch_(epoch), batch_(batch) {}

  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace unlearn
