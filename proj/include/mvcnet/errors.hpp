#pragma once

#include <stdexcept>
#include <string>

namespace mvcnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad shapes, non-finite values, violated type invariants.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (anchor mismatch, unknown primitive, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// logm / sqrtm asked to act on a matrix that is not positive definite.
class PositivityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Point or tangent vector outside the normal chart (sphere cut locus, ||v|| >= pi).
class ChartError : public Error {
 public:
  using Error::Error;
};

/// Iterative routine hit its iteration cap.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Frechet mean requested for a point set outside the uniqueness ball.
class NonUniqueMeanError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf appeared during the backward pass, or the loss diverged.
class NumericalAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace mvcnet
