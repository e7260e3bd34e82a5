#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ff/odeint.hpp"
#include "ff/trajgen.hpp"

namespace ff {

/// State-feedback controller u(x, t); the state Jacobian is optional.
struct Controller {
  std::function<Vector(const Vector&, double)> u;
  std::function<Matrix(const Vector&, double)> jac_state;
};

/// Symmetric-matrix-valued function of time backed by a cubic Hermite
/// interpolant over vectorized entries.
class MatrixInterpolant {
 public:
  MatrixInterpolant(Interpolant data, int n);

  Matrix eval(double t) const;
  Matrix eval_derivative(double t) const;
  double t_begin() const { return data_.t_begin(); }
  double t_end() const { return data_.t_end(); }
  int dim() const { return n_; }

 private:
  Interpolant data_;
  int n_;
};

/// Funnel cross-section shape P(x, t) = (x - ref(t))^T S(t) (x - ref(t)).
/// Either time-varying (Riccati interpolant + trajectory) or constant.
class QuadraticShape {
 public:
  QuadraticShape() = default;  // empty; any query throws
  QuadraticShape(MatrixInterpolant s, Trajectory reference);
  QuadraticShape(Matrix s_constant, Vector reference_state, double t_begin, double t_end);

  Matrix S(double t) const;
  Matrix S_dot(double t) const;
  Vector ref_state(double t) const;
  Vector ref_rate(double t) const;
  double t_begin() const { return t_begin_; }
  double t_end() const { return t_end_; }
  int dim() const { return n_; }

 private:
  void check_domain(double t) const;

  std::shared_ptr<const MatrixInterpolant> interp_;
  std::shared_ptr<const Trajectory> traj_;
  Matrix s_const_;
  Vector ref_const_;
  double t_begin_ = 0.0, t_end_ = 0.0;
  int n_ = 0;
};

/// P(x, t) for the shifted argument x - ref(t).
double shape_value(const QuadraticShape& shape, const Vector& x, double t);

/// d/dt P(x - ref(t), t) along the field:
/// 2 (x-ref)^T S (F(x,t) - ref') + (x-ref)^T S' (x-ref).
double shape_rate(const QuadraticShape& shape, const VectorField& field, const Vector& x, double t);

/// Gradient of shape_rate with respect to x (used by the derivative-check
/// falsifier).
Vector shape_rate_gradient(const QuadraticShape& shape, const VectorField& field, const Vector& x,
                           double t);

/// S(t) solving S' = -(A^T S + S A - S B R^{-1} B^T S + Q) backwards from
/// S(T) = S_T, stored as a cubic matrix interpolant on [0, T]. Symmetry is
/// maintained by evaluating the right-hand side on the symmetrized iterate.
MatrixInterpolant riccati_backward(const std::function<Matrix(double)>& a,
                                   const std::function<Matrix(double)>& b, const Matrix& q,
                                   const Matrix& r, const Matrix& s_final, double horizon,
                                   const IntegrationConfig& cfg = {});

/// Continuous algebraic Riccati equation via Kleinman-Newton iteration from
/// a stabilizing initial gain. `trace_history`, when given, records tr(P_i).
Matrix care_kleinman(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r,
                     std::vector<double>* trace_history = nullptr);

/// Solves A^T X + X A + W = 0 (W symmetric) densely via the Kronecker form.
Matrix lyapunov_solve(const Matrix& a, const Matrix& w);

/// Time-varying LQR tracking along `traj`:
/// u(x,t) = u~(t) - R^{-1} B(t)^T S(t) (x - x~(t)), with S from the backward
/// Riccati sweep over the linearization along the trajectory.
std::pair<Controller, QuadraticShape> tvlqr(const ControlSystem& sys,
                                            const Trajectory& traj, const Matrix& q,
                                            const Matrix& r, const Matrix& s_final,
                                            const IntegrationConfig& cfg = {});

/// Stabilizing controller for the full n-link pendulum obtained by
/// transferring the simplified-model LQR through the mass matrix, plus the
/// constant quadratic shape Delta^T S_n Delta around upright.
struct NlinkController {
  Controller controller;
  Matrix s;         // CARE cost-to-go of the simplified model
  Matrix gain;      // G with simplified-model input u* = -G Delta
  Matrix a_simplified;  // upright linearization of the simplified model
  Matrix b_simplified;
  Vector upright;
};

NlinkController nlink_controller(int n, double g, const Matrix& q, const Matrix& r);

}  // namespace ff
