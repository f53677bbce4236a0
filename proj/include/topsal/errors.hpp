#pragma once

#include <stdexcept>
#include <string>

namespace topsal {

/// Process exit codes used by the command-line tools.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kData = 2,
  kNumeric = 3,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kData; }
};

class UsageError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kUsage; }
};

// Shapes that do not agree: image vs. patch, code vs. dictionary, etc.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Not enough data to build the requested object (e.g. k-means with fewer points than centroids).
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Training data that cannot define a classifier (single class, all-zero features).
class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class CrcError : public FormatError {
 public:
  using FormatError::FormatError;
};

class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kNumeric; }
};

}  // namespace topsal
