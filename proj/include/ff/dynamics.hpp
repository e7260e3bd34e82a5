#pragma once

#include <functional>

#include "ff/numkernel.hpp"

namespace ff {

/// Open-loop system x' = f(x, u, t). Jacobian callbacks are optional; when
/// absent, consumers fall back to central finite differences.
struct ControlSystem {
  int state_dim = 0;
  int control_dim = 0;
  std::function<Vector(const Vector&, const Vector&, double)> rhs;
  std::function<Matrix(const Vector&, const Vector&, double)> jac_state;
  std::function<Matrix(const Vector&, const Vector&, double)> jac_control;
};

/// Closed-loop (or autonomous) field x' = F(x, t).
struct VectorField {
  int dim = 0;
  std::function<Vector(const Vector&, double)> rhs;
  std::function<Matrix(const Vector&, double)> jac;  // may be empty
};

/// Central-difference Jacobian with per-coordinate step 1e-6 * max(1, |x_i|).
Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x);

/// dF/dx at (x, t): the field's analytic Jacobian when present, otherwise
/// central differences.
Matrix jacobian(const VectorField& field, const Vector& x, double t);

/// Pendulum with theta measured from the upright vertical:
/// theta'' = (g/l) sin(theta) - b theta' / (m l^2) + u / (m l^2).
/// State (theta, theta'), one control.
ControlSystem make_pendulum(double m, double l, double g, double b);

/// 12-state quadcopter (x, y, z, psi, theta, phi and rates), 4 controls:
/// thrust u1 and angular torques u2..u4.
ControlSystem make_quadcopter(double m, double g);

/// n-link pendulum chain with unit masses and lengths, absolute link angles
/// from the positive horizontal axis (upright equilibrium at theta_i = pi/2).
/// Manipulator form M(theta) theta'' + h(theta, theta') = u.
ControlSystem make_nlink(int n, double g);

/// Companion model theta'' = -M(theta)^{-1} h(theta, theta') - u.
ControlSystem make_nlink_simplified(int n, double g);

// n-link helpers shared with tracking and the tests.
Matrix nlink_mass_matrix(int n, const Vector& theta);
Vector nlink_bias(int n, double g, const Vector& theta, const Vector& theta_dot);
double nlink_energy(int n, double g, const Vector& theta, const Vector& theta_dot);

/// Closes the loop: F(x, t) = f(x, u(x, t), t). The Jacobian is composed by
/// the chain rule when both the system and the controller provide one,
/// otherwise via central differences on F.
VectorField close_loop(const ControlSystem& sys,
                       std::function<Vector(const Vector&, double)> controller,
                       std::function<Matrix(const Vector&, double)> controller_jac = nullptr);

}  // namespace ff
