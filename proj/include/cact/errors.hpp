#pragma once

#include <stdexcept>
#include <string>

namespace cact {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or axis disagreement between tensors.
struct DimensionError : Error {
  using Error::Error;
};

// A documented precondition or postcondition was violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

// Bad run configuration (unknown key, invalid enum value, inconsistent sizes).
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg, std::string key = "")
      : Error(msg), key(std::move(key)) {}
  std::string key;
};

// A fold or class-balanced split cannot be formed (empty class, k too large).
struct StratificationError : Error {
  using Error::Error;
};

// The synthetic generator produced data violating its own guarantees.
struct GenerationError : Error {
  using Error::Error;
};

// Dataset on disk fails validation; message carries the itemized report.
struct ValidationError : Error {
  using Error::Error;
};

// File format / filesystem problems (checkpoints, images, manifests).
struct IoError : Error {
  using Error::Error;
};

}  // namespace cact
