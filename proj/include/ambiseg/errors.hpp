#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ambiseg {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor operands with incompatible shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (bad channel counts, odd embedding dims, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// API misuse: wrong call order, empty sets, non-scalar backward.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values during training or sampling. `step` is the loop index
/// at which the failure was detected, or -1 when not tied to a loop.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::int64_t step = -1)
      : Error(what), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

/// Failure while reading or writing dataset/checkpoint files.
class DataError : public Error {
 public:
  enum class Kind { kIo, kCorruptHeader, kCorruptBlob, kTruncated, kVersionMismatch, kMissingMeta };

  DataError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace ambiseg
