#pragma once

#include <string>
#include <vector>

#include "ff/dynamics.hpp"
#include "ff/odeint.hpp"

namespace ff {

/// Reference trajectory: piecewise cubic Hermite in the states (knot
/// derivatives are f(x_i, u_i, t_i)) and piecewise linear in the controls.
class Trajectory {
 public:
  /// Knot-based trajectory; state knot derivatives are evaluated with `sys`.
  Trajectory(std::vector<double> times, std::vector<Vector> states, std::vector<Vector> controls,
             const ControlSystem& sys);

  /// Constant trajectory with exact values and exactly zero rates.
  static Trajectory constant(const Vector& x_eq, const Vector& u_eq, double duration);

  Vector state(double t) const;
  Vector state_rate(double t) const;
  Vector control(double t) const;

  double t_begin() const { return times_.front(); }
  double t_end() const { return times_.back(); }
  const std::vector<double>& knots() const { return times_; }
  const std::vector<Vector>& states() const { return states_; }
  const std::vector<Vector>& controls() const { return controls_; }
  int state_dim() const { return static_cast<int>(states_.front().size()); }
  int control_dim() const { return static_cast<int>(controls_.front().size()); }

  /// Largest defect max_i ||f(x_i, u_i, t_i)|| reported by the collocation
  /// solve that produced this trajectory (zero for other constructors).
  double max_defect() const { return max_defect_; }

 private:
  Trajectory() = default;

  std::vector<double> times_;
  std::vector<Vector> states_;
  std::vector<Vector> controls_;
  std::vector<Vector> state_rates_;
  bool constant_ = false;
  double max_defect_ = 0.0;

  friend Trajectory collocation_trajectory(const ControlSystem&, const Vector&, const Vector&,
                                           double, int, double, std::uint64_t);
};

/// x(t) = x_eq, u(t) = u_eq on [0, duration].
Trajectory constant_trajectory(const Vector& x_eq, const Vector& u_eq, double duration);

/// ||f(x_eq, u_eq, 0)||: zero exactly at true equilibria.
double equilibrium_residual(const ControlSystem& sys, const Vector& x_eq, const Vector& u_eq);

/// Minimum-effort transfer from x0 to xT over [0, T] by trapezoidal direct
/// collocation with `segments` intervals, solved with the local NLP solver
/// from coarse-to-fine warm starts. Throws NotConverged when no start
/// reaches defect violation <= 1e-6.
Trajectory collocation_trajectory(const ControlSystem& sys, const Vector& x0, const Vector& xT,
                                  double duration, int segments, double effort_weight = 1.0,
                                  std::uint64_t seed = 0);

/// CSV rows `t,x1..xn,u1..um` at the knots, 17 significant digits.
void save_trajectory_csv(const Trajectory& traj, const std::string& path);

/// Rebuilds a trajectory from a CSV written by save_trajectory_csv; knot
/// derivatives are recomputed with `sys`.
Trajectory load_trajectory_csv(const std::string& path, const ControlSystem& sys);

}  // namespace ff
