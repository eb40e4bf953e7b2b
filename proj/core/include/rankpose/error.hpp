#pragma once

#include <stdexcept>
#include <string>

namespace rankpose {

// Base class for every error raised by the library. Subclasses name the
// failure category so callers (and the CLI) can map them to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition of an operation does not hold (empty positive
// set, mixed keypoint types in one instance batch, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// A quantity is mathematically undefined for the given input (|P| = 0 ratio,
// zero-variance correlation, covariance of fewer than two samples).
class UndefinedError : public Error {
 public:
  using Error::Error;
};

class NormalizationError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, const std::string& what);
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace rankpose
