#pragma once

#include <stdexcept>
#include <string>

namespace attnsteg {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A sequence is shorter than a convolution kernel.
class SequenceTooShortError : public DimensionError {
 public:
  using DimensionError::DimensionError;
};

/// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration, hyperparameter or input dataset.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, malformed or insufficient corpus or dataset files.
class DataError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Token id outside the embedding table.
class OutOfVocabularyError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf showed up in activations or parameters.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// I/O failure on a named path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Model stream could not be decoded.
class LoadError : public Error {
 public:
  enum class Kind { BadMagic, VersionMismatch, Truncated, Inconsistent };

  LoadError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace attnsteg
