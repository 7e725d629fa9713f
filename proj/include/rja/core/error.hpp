#pragma once

#include <stdexcept>
#include <string>

namespace rja {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not compose.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A model/trainer/data configuration is invalid or does not match its inputs.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A value became NaN or infinite.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given inputs (e.g. constant labels).
class MetricError : public Error {
 public:
  using Error::Error;
};

/// A binary file failed validation.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace rja
