#pragma once

#include <stdexcept>
#include <string>

namespace glann {

// Error kinds map onto the CLI exit codes: usage errors exit 1,
// data/format errors exit 2, numeric failures exit 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad arguments to an operation (shape mismatch, out-of-range id, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk data: bad magic, truncated payload, undecodable image.
class FormatError : public Error {
 public:
  using Error::Error;
};

// An object was used in a state that forbids the operation (stale pool, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

// Numeric-domain failures: zero-norm projection, indefinite matrices,
// non-finite losses.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Incompatible configuration (extractor/input mismatch, unknown arch, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Checkpoint-specific failures, kept distinct so callers can tell a corrupt
// file from an incompatible one.
class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class MissingTensorError : public FormatError {
 public:
  using FormatError::FormatError;
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  if (dynamic_cast<const FormatError*>(&e)) return 2;
  if (dynamic_cast<const StateError*>(&e)) return 2;
  if (dynamic_cast<const ArgumentError*>(&e)) return 1;
  if (dynamic_cast<const ConfigError*>(&e)) return 1;
  return 2;
}

}  // namespace glann
