#include "ff/tracking.hpp"

#include <algorithm>
#include <cmath>

#include "ff/errors.hpp"

namespace ff {

namespace {

Matrix reshape_sym(const Vector& v, int n) {
  Matrix m = Eigen::Map<const Matrix>(v.data(), n, n);
  return 0.5 * (m + m.transpose());
}

bool is_hurwitz(const Matrix& a) {
  Eigen::EigenSolver<Matrix> es(a, false);
  if (es.info() != Eigen::Success) return false;
  const double margin = -1e-9 * std::max(1.0, a.norm());
  return es.eigenvalues().real().maxCoeff() < margin;
}

}  // namespace

MatrixInterpolant::MatrixInterpolant(Interpolant data, int n) : data_(std::move(data)), n_(n) {
  if (data_.dim() != static_cast<Eigen::Index>(n) * n) {
    throw InvalidArgument("MatrixInterpolant: knot size does not match dimension");
  }
}

Matrix MatrixInterpolant::eval(double t) const { return reshape_sym(data_.eval(t), n_); }

Matrix MatrixInterpolant::eval_derivative(double t) const {
  return reshape_sym(data_.eval_derivative(t), n_);
}

QuadraticShape::QuadraticShape(MatrixInterpolant s, Trajectory reference)
    : interp_(std::make_shared<MatrixInterpolant>(std::move(s))),
      traj_(std::make_shared<Trajectory>(std::move(reference))) {
  t_begin_ = std::max(interp_->t_begin(), traj_->t_begin());
  t_end_ = std::min(interp_->t_end(), traj_->t_end());
  n_ = interp_->dim();
  if (traj_->state_dim() != n_) throw InvalidArgument("QuadraticShape: dimension mismatch");
}

QuadraticShape::QuadraticShape(Matrix s_constant, Vector reference_state, double t_begin,
                               double t_end)
    : s_const_(std::move(s_constant)),
      ref_const_(std::move(reference_state)),
      t_begin_(t_begin),
      t_end_(t_end),
      n_(static_cast<int>(ref_const_.size())) {
  require_symmetric(s_const_, "QuadraticShape");
  if (s_const_.rows() != ref_const_.size()) {
    throw InvalidArgument("QuadraticShape: dimension mismatch");
  }
  if (!(t_end_ > t_begin_)) throw InvalidArgument("QuadraticShape: empty time span");
}

void QuadraticShape::check_domain(double t) const {
  if (n_ == 0) throw InvalidArgument("QuadraticShape: empty shape");
  const double slack = 1e-9 * std::max(1.0, t_end_ - t_begin_);
  if (t < t_begin_ - slack || t > t_end_ + slack) {
    throw OutOfDomain("QuadraticShape: query time outside [t_begin, t_end]");
  }
}

Matrix QuadraticShape::S(double t) const {
  check_domain(t);
  return interp_ ? interp_->eval(t) : s_const_;
}

Matrix QuadraticShape::S_dot(double t) const {
  check_domain(t);
  return interp_ ? interp_->eval_derivative(t) : Matrix::Zero(n_, n_);
}

Vector QuadraticShape::ref_state(double t) const {
  check_domain(t);
  return traj_ ? traj_->state(t) : ref_const_;
}

Vector QuadraticShape::ref_rate(double t) const {
  check_domain(t);
  return traj_ ? traj_->state_rate(t) : Vector::Zero(n_);
}

double shape_value(const QuadraticShape& shape, const Vector& x, double t) {
  const Vector d = x - shape.ref_state(t);
  return d.dot(shape.S(t) * d);
}

double shape_rate(const QuadraticShape& shape, const VectorField& field, const Vector& x,
                  double t) {
  const Vector d = x - shape.ref_state(t);
  const Vector drift = field.rhs(x, t) - shape.ref_rate(t);
  return 2.0 * d.dot(shape.S(t) * drift) + d.dot(shape.S_dot(t) * d);
}

Vector shape_rate_gradient(const QuadraticShape& shape, const VectorField& field, const Vector& x,
                           double t) {
  const Vector d = x - shape.ref_state(t);
  const Matrix s = shape.S(t);
  const Vector drift = field.rhs(x, t) - shape.ref_rate(t);
  const Matrix jf = jacobian(field, x, t);
  return 2.0 * (s * drift) + 2.0 * (jf.transpose() * (s * d)) + 2.0 * (shape.S_dot(t) * d);
}

MatrixInterpolant riccati_backward(const std::function<Matrix(double)>& a,
                                   const std::function<Matrix(double)>& b, const Matrix& q,
                                   const Matrix& r, const Matrix& s_final, double horizon,
                                   const IntegrationConfig& cfg) {
  require_symmetric(q, "riccati_backward: Q");
  require_symmetric(r, "riccati_backward: R");
  require_symmetric(s_final, "riccati_backward: S_T");
  chol_lower(q);
  chol_lower(s_final);
  const Eigen::LLT<Matrix> r_llt(r);
  if (r_llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("riccati_backward: R is not positive definite");
  }
  if (!(horizon > 0.0)) throw InvalidArgument("riccati_backward: horizon must be positive");
  const int n = static_cast<int>(s_final.rows());

  // Integrate forward in reversed time tau = T - t. Evaluating the
  // right-hand side on the symmetrized iterate keeps the asymmetric part of
  // the state identically zero.
  VectorField rev;
  rev.dim = n * n;
  rev.rhs = [&, n](const Vector& v, double tau) {
    const Matrix s = reshape_sym(v, n);
    const double t = horizon - tau;
    const Matrix at = a(t);
    const Matrix bt = b(t);
    const Matrix rhs =
        at.transpose() * s + s * at - s * bt * r_llt.solve(bt.transpose() * s) + q;
    return Vector(Eigen::Map<const Vector>(rhs.data(), n * n));
  };

  Vector v0 = Eigen::Map<const Vector>(s_final.data(), n * n);
  Interpolant rev_dense = integrate_dense(rev, v0, 0.0, horizon, cfg);

  // Flip to forward time: t = T - tau reverses knot order and flips the
  // sign of the derivatives.
  const auto& taus = rev_dense.knots();
  const auto& vals = rev_dense.values();
  const auto& ders = rev_dense.derivatives();
  const std::size_t count = taus.size();
  std::vector<double> ts(count);
  std::vector<Vector> xs(count), fs(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = count - 1 - i;
    ts[i] = horizon - taus[j];
    xs[i] = vals[j];
    fs[i] = -ders[j];
  }
  ts.front() = 0.0;
  ts.back() = horizon;
  return MatrixInterpolant(Interpolant(std::move(ts), std::move(xs), std::move(fs)), n);
}

Matrix lyapunov_solve(const Matrix& a, const Matrix& w) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n || w.rows() != n || w.cols() != n) {
    throw InvalidArgument("lyapunov_solve: dimension mismatch");
  }
  // vec(A^T X) = (I (x) A^T) vec X, vec(X A) = (A^T (x) I) vec X.
  Matrix k = Matrix::Zero(n * n, n * n);
  const Matrix at = a.transpose();
  for (Eigen::Index i = 0; i < n; ++i) {
    k.block(i * n, i * n, n, n) += at;
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index l = 0; l < n; ++l) k(j * n + i, l * n + i) += at(j, l);
    }
  }
  const Vector rhs = -Eigen::Map<const Vector>(w.data(), n * n);
  Eigen::PartialPivLU<Matrix> lu(k);
  const Vector x = lu.solve(rhs);
  if (!x.allFinite()) throw NotConverged("lyapunov_solve: singular Kronecker system");
  return reshape_sym(x, static_cast<int>(n));
}

namespace {

double care_residual(const Matrix& a, const Matrix& b, const Matrix& q,
                     const Eigen::LLT<Matrix>& r_llt, const Matrix& s) {
  const Matrix res =
      a.transpose() * s + s * a - s * b * r_llt.solve(b.transpose() * s) + q;
  return res.norm();
}

Matrix initial_stabilizing_gain(const Matrix& a, const Matrix& b,
                                const Eigen::LLT<Matrix>& r_llt) {
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();

  if (is_hurwitz(a)) return Matrix::Zero(m, n);

  // Pole-shift heuristic: P0 from a Lyapunov equation for A - alpha I with
  // alpha above the spectral abscissa (bounded by the top eigenvalue of the
  // symmetric part).
  const double abscissa_bound = sym_eig_max(0.5 * (a + a.transpose())).value;
  const double alpha = std::max(0.0, abscissa_bound) + 1.0;
  {
    const Matrix shifted = a - alpha * Matrix::Identity(n, n);
    const Matrix p0 = lyapunov_solve(shifted, Matrix::Identity(n, n));
    const Matrix k = r_llt.solve(b.transpose() * p0);
    if (k.allFinite() && is_hurwitz(a - b * k)) return k;
  }

  // Bass fallback: (A + beta I) Z + Z (A + beta I)^T = 2 B R^{-1} B^T,
  // K = R^{-1} B^T Z^{-1}.
  {
    const double beta = a.norm() + 1.0;
    const Matrix shifted_t = (a + beta * Matrix::Identity(n, n)).transpose();
    const Matrix z = lyapunov_solve(shifted_t, -2.0 * b * r_llt.solve(b.transpose()));
    Eigen::PartialPivLU<Matrix> lu(z);
    const Matrix zinv_bt = lu.solve(Matrix::Identity(n, n));
    const Matrix k = r_llt.solve(b.transpose() * zinv_bt);
    if (k.allFinite() && is_hurwitz(a - b * k)) return k;
  }

  throw NoStabilizingGain("care_kleinman: initial stabilizing gain search failed");
}

}  // namespace

Matrix care_kleinman(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r,
                     std::vector<double>* trace_history) {
  require_symmetric(q, "care_kleinman: Q");
  require_symmetric(r, "care_kleinman: R");
  chol_lower(q);
  const Eigen::LLT<Matrix> r_llt(r);
  if (r_llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("care_kleinman: R is not positive definite");
  }
  if (a.rows() != a.cols() || b.rows() != a.rows()) {
    throw InvalidArgument("care_kleinman: dimension mismatch");
  }

  Matrix k = initial_stabilizing_gain(a, b, r_llt);
  const double target = 1e-8 * q.norm();
  Matrix p;
  for (int iter = 0; iter < 200; ++iter) {
    const Matrix acl = a - b * k;
    p = lyapunov_solve(acl, q + k.transpose() * (r * k));
    if (trace_history) trace_history->push_back(p.trace());
    k = r_llt.solve(b.transpose() * p);
    if (care_residual(a, b, q, r_llt, p) <= target) return 0.5 * (p + p.transpose());
  }
  throw NotConverged("care_kleinman: no convergence within 200 iterations");
}

std::pair<Controller, QuadraticShape> tvlqr(const ControlSystem& sys, const Trajectory& traj,
                                            const Matrix& q, const Matrix& r,
                                            const Matrix& s_final, const IntegrationConfig& cfg) {
  if (sys.state_dim != traj.state_dim() || sys.control_dim != traj.control_dim()) {
    throw InvalidArgument("tvlqr: system and trajectory dimensions disagree");
  }
  auto a_of_t = [&sys, &traj](double t) {
    const Vector x = traj.state(t);
    const Vector u = traj.control(t);
    if (sys.jac_state) return sys.jac_state(x, u, t);
    return fd_jacobian([&](const Vector& y) { return sys.rhs(y, u, t); }, x);
  };
  auto b_of_t = [&sys, &traj](double t) {
    const Vector x = traj.state(t);
    const Vector u = traj.control(t);
    if (sys.jac_control) return sys.jac_control(x, u, t);
    return fd_jacobian([&](const Vector& w) { return sys.rhs(x, w, t); }, u);
  };

  const double horizon = traj.t_end() - traj.t_begin();
  if (traj.t_begin() != 0.0) throw InvalidArgument("tvlqr: trajectory must start at t = 0");
  MatrixInterpolant s_interp = riccati_backward(a_of_t, b_of_t, q, r, s_final, horizon, cfg);

  auto s_shared = std::make_shared<MatrixInterpolant>(s_interp);
  auto traj_shared = std::make_shared<Trajectory>(traj);
  auto r_llt = std::make_shared<Eigen::LLT<Matrix>>(r);
  ControlSystem sys_copy = sys;
  auto b_shared = std::make_shared<std::function<Matrix(double)>>(
      [sys_copy, traj_shared](double t) {
        const Vector x = traj_shared->state(t);
        const Vector u = traj_shared->control(t);
        if (sys_copy.jac_control) return sys_copy.jac_control(x, u, t);
        return fd_jacobian([&](const Vector& w) { return sys_copy.rhs(x, w, t); }, u);
      });

  Controller ctrl;
  ctrl.u = [s_shared, traj_shared, r_llt, b_shared](const Vector& x, double t) {
    const Matrix gain = r_llt->solve((*b_shared)(t).transpose() * s_shared->eval(t));
    return (traj_shared->control(t) - gain * (x - traj_shared->state(t))).eval();
  };
  ctrl.jac_state = [s_shared, r_llt, b_shared](const Vector&, double t) {
    return (-r_llt->solve((*b_shared)(t).transpose() * s_shared->eval(t))).eval();
  };

  QuadraticShape shape(s_interp, traj);
  return {std::move(ctrl), std::move(shape)};
}

NlinkController nlink_controller(int n, double g, const Matrix& q, const Matrix& r) {
  if (n < 1) throw InvalidArgument("nlink_controller: n must be at least 1");
  Vector upright = Vector::Zero(2 * n);
  upright.head(n).setConstant(1.5707963267948966);

  // Upright linearization of the simplified model
  // theta'' = -M^{-1} h - u:  A = [[0, I], [g Mbar^{-1} D, 0]], B = [0; -I]
  // with D = diag(n, n-1, ..., 1).
  const Matrix mbar = nlink_mass_matrix(n, upright.head(n));
  Matrix d = Matrix::Zero(n, n);
  for (int j = 0; j < n; ++j) d(j, j) = static_cast<double>(n - j);
  Matrix a = Matrix::Zero(2 * n, 2 * n);
  a.topRightCorner(n, n).setIdentity();
  const Matrix l = chol_lower(mbar);
  Matrix minv_d = l.triangularView<Eigen::Lower>().solve(d);
  minv_d = l.transpose().triangularView<Eigen::Upper>().solve(minv_d);
  a.bottomLeftCorner(n, n) = g * minv_d;
  Matrix b = Matrix::Zero(2 * n, n);
  b.bottomRows(n) = -Matrix::Identity(n, n);

  NlinkController out;
  out.s = care_kleinman(a, b, q, r);
  const Eigen::LLT<Matrix> r_llt(r);
  out.gain = r_llt.solve(b.transpose() * out.s);
  out.a_simplified = a;
  out.b_simplified = b;
  out.upright = upright;

  const Matrix gain = out.gain;
  const Vector up = upright;
  const int links = n;
  out.controller.u = [gain, up, links](const Vector& x, double) {
    const Vector v = gain * (x - up);
    return (nlink_mass_matrix(links, x.head(links)) * v).eval();
  };
  out.controller.jac_state = [gain, up, links](const Vector& x, double) {
    const Vector theta = x.head(links);
    const Vector v = gain * (x - up);
    const Matrix m = nlink_mass_matrix(links, theta);
    Matrix jac = m * gain;
    // d/d theta_s of M(theta) v with M_jk = c_jk cos(theta_j - theta_k).
    for (int s = 0; s < links; ++s) {
      for (int j = 0; j < links; ++j) {
        double acc = 0.0;
        for (int k = 0; k < links; ++k) {
          const double c = static_cast<double>(links - std::max(j, k));
          const double ds = (j == s ? 1.0 : 0.0) - (k == s ? 1.0 : 0.0);
          if (ds != 0.0) acc += -c * std::sin(theta(j) - theta(k)) * ds * v(k);
        }
        jac(j, s) += acc;
      }
    }
    return jac;
  };
  return out;
}

}  // namespace ff
