#pragma once

#include <stdexcept>
#include <string>

namespace simkd {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced or consumed where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain (T <= 0, t == 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment or component configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. a stale forward cache or mismatched name sets.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed user data (empty dataset, non one-hot label rows).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Stored file failed validation (bad magic, truncated, checksum).
class CorruptionError : public Error {
 public:
  using Error::Error;
};

}  // namespace simkd
