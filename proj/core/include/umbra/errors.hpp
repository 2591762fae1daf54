#pragma once

#include <stdexcept>
#include <string>

namespace umbra {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value violates a documented invariant or precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// File system or stream failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A JSON document does not match its schema. `field()` names the offending path.
class SchemaError : public Error {
 public:
  SchemaError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Scene generation could not satisfy its placement constraints.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// An edit or relocation would move content outside the frame.
class OutOfFrameError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint missing, corrupt, or incompatible with the requested model.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss) or could not proceed.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace umbra
