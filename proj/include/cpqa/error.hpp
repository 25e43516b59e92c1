#pragma once

#include <stdexcept>
#include <string>

namespace cpqa {

// Base class for every error raised by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes or dimensions do not line up.
struct ShapeError : Error {
  using Error::Error;
};

// An index (class target, token id, chunk reference) is out of range.
struct IndexError : Error {
  using Error::Error;
};

// An API was called outside its contract (wrong slot kind, missing grad, ...).
struct ContractError : Error {
  using Error::Error;
};

// Non-finite values showed up where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// A sequence does not fit the configured maximum length.
struct LengthError : Error {
  using Error::Error;
};

// A slot id is not present in the registry / prompt bank.
struct RegistryError : Error {
  using Error::Error;
};

// A data file could not be parsed; message carries the line number.
struct ParseError : Error {
  using Error::Error;
};

// A data file parsed but violates the documented schema.
struct ValidationError : Error {
  using Error::Error;
};

// A checkpoint has the wrong magic or version.
struct FormatError : Error {
  using Error::Error;
};

// A checkpoint is truncated or internally inconsistent.
struct CorruptionError : Error {
  using Error::Error;
};

// A run-config key is unknown, malformed, or incompatible with a checkpoint.
struct ConfigError : Error {
  using Error::Error;
};

// Training produced a non-finite loss.
struct DivergenceError : Error {
  using Error::Error;
};

}  // namespace cpqa
