#pragma once

#include <stdexcept>
#include <string>

namespace mmae {

/// Base for every error the library raises.  The CLI maps the concrete
/// subclasses onto its exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument or on input data was violated.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or parameter.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t epoch, std::size_t batch)
      : Error(what), epoch_(epoch), batch_(batch) {}

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

/// File system or parse failure while reading/writing external files.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A persisted document does not match the expected schema or version.
class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmae
