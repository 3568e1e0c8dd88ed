#pragma once

#include <stdexcept>
#include <string>

namespace fagan {

// Base for every error raised by the library. Callers that only care about
// "something in fagan went wrong" catch this; the CLI maps it to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class ManifestError : public Error {
 public:
  using Error::Error;
};

class ImageError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class FingerprintMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class EditError : public Error {
 public:
  using Error::Error;
};

}  // namespace fagan
