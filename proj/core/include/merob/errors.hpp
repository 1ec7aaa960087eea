#pragma once

#include <stdexcept>
#include <string>

namespace merob {

/// Base of every error thrown by the library. The CLI maps each subclass
/// onto a distinct exit code (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. calling backward() twice on one graph.
class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Corrupt or mismatched binary container / manifest.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Audio or annotation input could not be read.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Input data was readable but violates a declared range.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient.
class NumericalError : public Error {
 public:
  using Error::Error;
};

enum class ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfig = 2,
  kData = 3,
  kNumerical = 4,
};

ExitCode exit_code(const std::exception& e) noexcept;

}  // namespace merob
