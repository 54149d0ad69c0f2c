#pragma once

#include <stdexcept>
#include <string>

namespace qsign {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied something malformed: bad sizes, non-finite entries,
/// out-of-range levels. The CLI maps these to exit code 2.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// A is not of full row rank (or no nonsingular m-column block exists).
class HypothesisRankError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Numerical failures. The CLI maps these to exit code 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class SolverError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Some entry of the homopower score vector is almost surely zero.
class DegenerateHypothesisError : public NumericalError {
 public:
  DegenerateHypothesisError(const std::string& what, int entry)
      : NumericalError(what), entry_(entry) {}
  int entry() const noexcept { return entry_; }

 private:
  int entry_;
};

class EmptyRegionError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class OracleDegenerateError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace qsign
