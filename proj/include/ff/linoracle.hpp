#pragma once

#include <vector>

#include "ff/numkernel.hpp"

namespace ff {

/// E = {x : (x - center)^T Q^{-1} (x - center) <= 1}, Q symmetric positive
/// definite.
struct EllipsoidSet {
  Vector center;
  Matrix q;
};

/// Image of E under the flow of x' = A x over time t: center maps through
/// e^{At}, the matrix becomes e^{At} Q e^{A^T t}.
EllipsoidSet propagate_ellipsoid(const Matrix& a, const EllipsoidSet& e, double t);

/// Exact optimal funnel levels for x' = A x with shape {x^T S x <= rho} and
/// terminal set `goal` (centered at the equilibrium), iterated backwards in
/// time: rho_N is the largest level whose sublevel set fits in the goal, and
/// each earlier rho_i is the largest level whose sublevel set flows into
/// {x^T S x <= rho_{i+1}} over one grid step (transition matrix e^{A h}).
/// The one-step recursion is what makes the result a funnel: every grid
/// cross-section is an S-sublevel set, so containment must hold step by
/// step, not just against the terminal set.
std::vector<double> optimal_rho_sequence(const Matrix& a, const Matrix& s,
                                         const EllipsoidSet& goal,
                                         const std::vector<double>& grid);

}  // namespace ff
