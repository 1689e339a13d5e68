#pragma once

#include <stdexcept>
#include <string>

namespace designz {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector/matrix sizes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Too few units for a variance or covariance.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument value (treated count, alpha, model string, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Exact enumeration would exceed the configured cap.
class EnumerationTooLargeError : public Error {
 public:
  EnumerationTooLargeError(const std::string& what, unsigned long long cap)
      : Error(what), cap_(cap) {}
  unsigned long long cap() const noexcept { return cap_; }

 private:
  unsigned long long cap_;
};

/// A g-scale transform was evaluated outside its domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// An operation's documented precondition does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Requested combination is not supported (e.g. q-vectors for a non-canonical family).
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// A matrix that must be inverted is singular.
class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

/// The root finder did not reach a certified root.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace designz
