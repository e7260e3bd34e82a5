#include "ff/dynamics.hpp"

#include <cmath>
#include <utility>

#include "ff/errors.hpp"

namespace ff {

Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x) {
  const Eigen::Index n = x.size();
  Vector probe = x;
  Matrix jac;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double step = 1e-6 * std::max(1.0, std::abs(x(i)));
    probe(i) = x(i) + step;
    const Vector hi = f(probe);
    probe(i) = x(i) - step;
    const Vector lo = f(probe);
    probe(i) = x(i);
    if (jac.size() == 0) jac.resize(hi.size(), n);
    jac.col(i) = (hi - lo) / (2.0 * step);
  }
  if (!jac.allFinite()) throw NonFiniteState("fd_jacobian: non-finite evaluation");
  return jac;
}

Matrix jacobian(const VectorField& field, const Vector& x, double t) {
  if (!x.allFinite()) throw InvalidArgument("jacobian: non-finite state");
  if (field.jac) {
    Matrix j = field.jac(x, t);
    if (!j.allFinite()) throw NonFiniteState("jacobian: non-finite evaluation");
    return j;
  }
  return fd_jacobian([&](const Vector& y) { return field.rhs(y, t); }, x);
}

ControlSystem make_pendulum(double m, double l, double g, double b) {
  if (m <= 0.0 || l <= 0.0) throw InvalidArgument("make_pendulum: m and l must be positive");
  ControlSystem sys;
  sys.state_dim = 2;
  sys.control_dim = 1;
  const double ml2 = m * l * l;
  sys.rhs = [=](const Vector& x, const Vector& u, double) {
    Vector dx(2);
    dx(0) = x(1);
    dx(1) = (g / l) * std::sin(x(0)) - b * x(1) / ml2 + u(0) / ml2;
    return dx;
  };
  sys.jac_state = [=](const Vector& x, const Vector&, double) {
    Matrix a(2, 2);
    a << 0.0, 1.0, (g / l) * std::cos(x(0)), -b / ml2;
    return a;
  };
  sys.jac_control = [=](const Vector&, const Vector&, double) {
    Matrix bm(2, 1);
    bm << 0.0, 1.0 / ml2;
    return bm;
  };
  return sys;
}

ControlSystem make_quadcopter(double m, double g) {
  if (m <= 0.0) throw InvalidArgument("make_quadcopter: m must be positive");
  ControlSystem sys;
  sys.state_dim = 12;
  sys.control_dim = 4;
  // State: (x, y, z, psi, theta, phi, and the six rates).
  sys.rhs = [=](const Vector& x, const Vector& u, double) {
    const double psi = x(3), th = x(4), phi = x(5);
    const double sps = std::sin(psi), cps = std::cos(psi);
    const double sth = std::sin(th), cth = std::cos(th);
    const double sph = std::sin(phi), cph = std::cos(phi);
    Vector dx(12);
    dx.head(6) = x.tail(6);
    dx(6) = u(0) * (sph * sps + cph * cps * sth) / m;
    dx(7) = u(0) * (cph * sth * sps - cps * sph) / m;
    dx(8) = u(0) * cth * cph / m - g;
    dx(9) = u(1) / m;
    dx(10) = u(2) / m;
    dx(11) = u(3) / m;
    return dx;
  };
  sys.jac_state = [=](const Vector& x, const Vector& u, double) {
    const double psi = x(3), th = x(4), phi = x(5);
    const double sps = std::sin(psi), cps = std::cos(psi);
    const double sth = std::sin(th), cth = std::cos(th);
    const double sph = std::sin(phi), cph = std::cos(phi);
    const double u1 = u(0) / m;
    Matrix a = Matrix::Zero(12, 12);
    a.topRightCorner(6, 6).setIdentity();
    a(6, 3) = u1 * (sph * cps - cph * sps * sth);
    a(6, 4) = u1 * cph * cps * cth;
    a(6, 5) = u1 * (cph * sps - sph * cps * sth);
    a(7, 3) = u1 * (cph * sth * cps + sps * sph);
    a(7, 4) = u1 * cph * cth * sps;
    a(7, 5) = u1 * (-sph * sth * sps - cps * cph);
    a(8, 4) = -u1 * sth * cph;
    a(8, 5) = -u1 * cth * sph;
    return a;
  };
  sys.jac_control = [=](const Vector& x, const Vector&, double) {
    const double psi = x(3), th = x(4), phi = x(5);
    const double sps = std::sin(psi), cps = std::cos(psi);
    const double sth = std::sin(th), cth = std::cos(th);
    const double sph = std::sin(phi), cph = std::cos(phi);
    Matrix b = Matrix::Zero(12, 4);
    b(6, 0) = (sph * sps + cph * cps * sth) / m;
    b(7, 0) = (cph * sth * sps - cps * sph) / m;
    b(8, 0) = cth * cph / m;
    b(9, 1) = 1.0 / m;
    b(10, 2) = 1.0 / m;
    b(11, 3) = 1.0 / m;
    return b;
  };
  return sys;
}

Matrix nlink_mass_matrix(int n, const Vector& theta) {
  Matrix m(n, n);
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k <= j; ++k) {
      const double c = static_cast<double>(n - j);  // n - max(j,k) with 0-based j >= k
      m(j, k) = c * std::cos(theta(j) - theta(k));
      m(k, j) = m(j, k);
    }
  }
  return m;
}

Vector nlink_bias(int n, double g, const Vector& theta, const Vector& theta_dot) {
  Vector h(n);
  for (int j = 0; j < n; ++j) {
    double s = g * static_cast<double>(n - j) * std::cos(theta(j));
    for (int k = 0; k < n; ++k) {
      const double c = static_cast<double>(n - std::max(j, k));
      s += c * std::sin(theta(j) - theta(k)) * theta_dot(k) * theta_dot(k);
    }
    h(j) = s;
  }
  return h;
}

double nlink_energy(int n, double g, const Vector& theta, const Vector& theta_dot) {
  const Matrix m = nlink_mass_matrix(n, theta);
  double e = 0.5 * theta_dot.dot(m * theta_dot);
  for (int j = 0; j < n; ++j) e += g * static_cast<double>(n - j) * std::sin(theta(j));
  return e;
}

ControlSystem make_nlink(int n, double g) {
  if (n < 1) throw InvalidArgument("make_nlink: n must be at least 1");
  ControlSystem sys;
  sys.state_dim = 2 * n;
  sys.control_dim = n;
  sys.rhs = [n, g](const Vector& x, const Vector& u, double) {
    const Vector theta = x.head(n);
    const Vector theta_dot = x.tail(n);
    const Matrix m = nlink_mass_matrix(n, theta);
    const Vector h = nlink_bias(n, g, theta, theta_dot);
    Vector dx(2 * n);
    dx.head(n) = theta_dot;
    dx.tail(n) = solve_spd(m, u - h);
    return dx;
  };
  sys.jac_control = [n](const Vector& x, const Vector&, double) {
    const Matrix l = chol_lower(nlink_mass_matrix(n, x.head(n)));
    Matrix b = Matrix::Zero(2 * n, n);
    Matrix inv = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
    b.bottomRows(n) = l.transpose().triangularView<Eigen::Upper>().solve(inv);
    return b;
  };
  return sys;
}

ControlSystem make_nlink_simplified(int n, double g) {
  if (n < 1) throw InvalidArgument("make_nlink_simplified: n must be at least 1");
  ControlSystem sys;
  sys.state_dim = 2 * n;
  sys.control_dim = n;
  sys.rhs = [n, g](const Vector& x, const Vector& u, double) {
    const Vector theta = x.head(n);
    const Vector theta_dot = x.tail(n);
    const Matrix m = nlink_mass_matrix(n, theta);
    const Vector h = nlink_bias(n, g, theta, theta_dot);
    Vector dx(2 * n);
    dx.head(n) = theta_dot;
    dx.tail(n) = -solve_spd(m, h) - u;
    return dx;
  };
  sys.jac_control = [n](const Vector&, const Vector&, double) {
    Matrix b = Matrix::Zero(2 * n, n);
    b.bottomRows(n) = -Matrix::Identity(n, n);
    return b;
  };
  return sys;
}

VectorField close_loop(const ControlSystem& sys,
                       std::function<Vector(const Vector&, double)> controller,
                       std::function<Matrix(const Vector&, double)> controller_jac) {
  if (!sys.rhs || !controller) throw InvalidArgument("close_loop: missing callbacks");
  VectorField field;
  field.dim = sys.state_dim;
  const int m = sys.control_dim;
  field.rhs = [sys, controller, m](const Vector& x, double t) {
    const Vector u = controller(x, t);
    if (u.size() != m) throw InvalidArgument("close_loop: controller output dimension mismatch");
    return sys.rhs(x, u, t);
  };
  if (sys.jac_state && sys.jac_control && controller_jac) {
    field.jac = [sys, controller, controller_jac](const Vector& x, double t) {
      const Vector u = controller(x, t);
      return (sys.jac_state(x, u, t) + sys.jac_control(x, u, t) * controller_jac(x, t)).eval();
    };
  } else {
    auto rhs = field.rhs;
    field.jac = [rhs](const Vector& x, double t) {
      return fd_jacobian([&](const Vector& y) { return rhs(y, t); }, x);
    };
  }
  return field;
}

}  // namespace ff
