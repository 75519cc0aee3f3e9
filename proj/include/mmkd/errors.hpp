#pragma once

#include <stdexcept>
#include <string>

namespace mmkd {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or feature shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A hyperparameter or argument outside its valid range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Input data that does not fit the model or dataset it is used with.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed document or CSV file.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. calling backward on a non-scalar tensor.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A forward or backward pass produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training diverged; the message carries epoch and batch.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmkd
