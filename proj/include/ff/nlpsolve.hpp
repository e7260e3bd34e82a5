#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "ff/numkernel.hpp"
#include "ff/rng.hpp"

namespace ff {

enum class Sense { Minimize, Maximize };
enum class ConstraintKind { Inequality, Equality };  // g(x) <= 0  |  h(x) = 0
enum class NlpStatus { Converged, IterationLimit, Infeasible };

/// Smooth scalar callback: returns the value and, when `grad` is non-null,
/// fills the gradient.
using ScalarFn = std::function<double(const Vector&, Vector*)>;

struct NlpConstraint {
  ConstraintKind kind = ConstraintKind::Inequality;
  ScalarFn fn;
};

struct NlpProblem {
  int dim = 0;
  Sense sense = Sense::Minimize;
  ScalarFn objective;
  std::vector<NlpConstraint> constraints;
};

struct NlpResult {
  Vector x;
  double objective = 0.0;  // in the problem's own sense
  NlpStatus status = NlpStatus::IterationLimit;
  double kkt_residual = 0.0;
  double constraint_violation = 0.0;
  std::int64_t evaluations = 0;  // objective/constraint evaluation sweeps
};

/// Augmented-Lagrangian outer loop (penalty growth x10, multiplier updates)
/// around a BFGS inner minimization with strong-Wolfe line search.
NlpResult solve_local(const NlpProblem& problem, const Vector& x0, double tol = 1e-8);

enum class EllipsoidRegion { Interior, Boundary };

/// Draws from {x : (x-center)^T S (x-center) <= rho} (Interior, uniform) or
/// its boundary: Gaussian direction, radius u^{1/n} for the interior case,
/// mapped through L^{-T} of L L^T = S.
Vector sample_ellipsoid(const Matrix& s, double rho, const Vector& center, EllipsoidRegion where,
                        CounterRng& rng);

struct MultistartOptions {
  int stall_budget = 5;        // consecutive non-improving solves before stopping
  std::uint64_t seed = 0;      // master seed
  std::uint64_t salt = 0;      // distinguishes independent multistart invocations
  int max_restarts = 10'000;
  int threads = 1;
  double tol = 1e-8;
  // Candidate counts as an improvement over the incumbent. Default: relative
  // objective improvement above 1e-10 in the problem's sense, never trading
  // a feasible incumbent for an infeasible candidate.
  std::function<bool(const NlpResult& incumbent, const NlpResult& candidate)> improves;
};

/// Restart k draws its start from sampler(rng_k) with a counter-derived
/// stream, so the incumbent sequence is identical for any thread count.
NlpResult multistart(const NlpProblem& problem,
                     const std::function<Vector(CounterRng&)>& sampler,
                     const MultistartOptions& options);

}  // namespace ff
