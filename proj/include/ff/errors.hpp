#pragma once

#include <stdexcept>
#include <string>

namespace ff {

/// Base class for all errors thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidArgument : Error {
  using Error::Error;
};

/// A matrix required to be symmetric positive definite was not (a Cholesky
/// pivot was non-positive).
struct NotPositiveDefinite : Error {
  using Error::Error;
};

/// A matrix required to be symmetric exceeded the asymmetry tolerance.
struct NotSymmetric : Error {
  using Error::Error;
};

/// The integrated state left the representable range (finite-time escape).
struct NonFiniteState : Error {
  using Error::Error;
};

struct StepLimitExceeded : Error {
  using Error::Error;
};

/// An NLP callback returned a non-finite value at the starting point.
struct NonFiniteProblem : Error {
  using Error::Error;
};

struct NotConverged : Error {
  using Error::Error;
};

struct NoStabilizingGain : Error {
  using Error::Error;
};

/// The warm start handed to the shrink problem violates its constraint.
struct InfeasibleStart : Error {
  using Error::Error;
};

struct GoalExcludesTrajectoryEnd : Error {
  using Error::Error;
};

/// A funnel level collapsed below 1e-12; the shape or controller does not
/// match the system.
struct RhoUnderflow : Error {
  using Error::Error;
};

/// Evaluation time outside an interpolant's knot span.
struct OutOfDomain : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace ff
