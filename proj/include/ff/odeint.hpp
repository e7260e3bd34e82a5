#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ff/dynamics.hpp"

namespace ff {

struct IntegrationConfig {
  double abs_tol = 1e-9;
  double rel_tol = 1e-9;
  double max_step = 1e-3;
  std::int64_t max_steps = 10'000'000;
};

/// Piecewise cubic Hermite interpolant on strictly increasing knots; knot
/// values and derivatives are reproduced exactly.
class Interpolant {
 public:
  Interpolant(std::vector<double> times, std::vector<Vector> values, std::vector<Vector> derivatives);

  Vector eval(double t) const;
  Vector eval_derivative(double t) const;

  double t_begin() const { return times_.front(); }
  double t_end() const { return times_.back(); }
  const std::vector<double>& knots() const { return times_; }
  const std::vector<Vector>& values() const { return values_; }
  const std::vector<Vector>& derivatives() const { return derivs_; }
  Eigen::Index dim() const { return values_.front().size(); }

 private:
  // Returns the interval index and the clamped evaluation time.
  std::pair<std::size_t, double> locate(double t) const;

  std::vector<double> times_;
  std::vector<Vector> values_;
  std::vector<Vector> derivs_;
};

/// Endpoint of the solution through (x0, t0) at t1, integrated with the
/// adaptive Fehlberg 4(5) pair.
Vector flow(const VectorField& field, const Vector& x0, double t0, double t1,
            const IntegrationConfig& cfg = {});

/// Flow endpoint together with the sensitivity matrix d x(t1) / d x0,
/// obtained by integrating the variational equation Phi' = dF/dx Phi jointly
/// with the state.
std::pair<Vector, Matrix> flow_sensitivity(const VectorField& field, const Vector& x0, double t0,
                                           double t1, const IntegrationConfig& cfg = {});

/// Integrates and keeps every accepted step as a Hermite knot.
Interpolant integrate_dense(const VectorField& field, const Vector& x0, double t0, double t1,
                            const IntegrationConfig& cfg = {});

}  // namespace ff
