#pragma once

#include <stdexcept>
#include <string>

namespace vpcnn {

/// Base of every error raised by the library. The CLI maps the subclasses
/// onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameter or architecture setting.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API called outside its preconditions.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable input data.
class DataError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public DataError {
 public:
  using DataError::DataError;
};

class TruncatedError : public DataError {
 public:
  using DataError::DataError;
};

class VersionError : public DataError {
 public:
  using DataError::DataError;
};

class ChecksumError : public DataError {
 public:
  using DataError::DataError;
};

/// Non-finite loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace vpcnn
