#include <doctest.h>

#include <cmath>

#include "ff/dynamics.hpp"
#include "ff/errors.hpp"
#include "ff/numkernel.hpp"
#include "ff/odeint.hpp"
#include "ff/rng.hpp"

using ff::Matrix;
using ff::Vector;

namespace {

ff::VectorField linear_field(const Matrix& a) {
  return {static_cast<int>(a.rows()), [a](const Vector& x, double) { return (a * x).eval(); },
          [a](const Vector&, double) { return a; }};
}

ff::VectorField zero_field(int n) {
  return {n, [n](const Vector&, double) { return Vector::Zero(n).eval(); },
          [n](const Vector&, double) { return Matrix::Zero(n, n).eval(); }};
}

}  // namespace

TEST_CASE("flow of the zero field is the identity") {
  Vector x0(3);
  x0 << 1.0, -2.0, 0.5;
  CHECK(ff::flow(zero_field(3), x0, 0.0, 2.0).isApprox(x0));
  // t1 == t0 returns the start unchanged.
  CHECK(ff::flow(zero_field(3), x0, 1.0, 1.0) == x0);
}

TEST_CASE("flow matches the scalar decay closed form") {
  const ff::VectorField decay = linear_field(-Matrix::Identity(1, 1));
  Vector x0(1);
  x0 << 1.0;
  const double endpoint = ff::flow(decay, x0, 0.0, 1.0)(0);
  CHECK(std::abs(endpoint - 0.36787944117144233) < 1e-8);
}

TEST_CASE("harmonic oscillator closes its period") {
  Matrix a(2, 2);
  a << 0.0, 1.0, -1.0, 0.0;
  Vector x0(2);
  x0 << 1.0, 0.0;
  const Vector end = ff::flow(linear_field(a), x0, 0.0, 2.0 * 3.14159265358979323846);
  CHECK((end - x0).norm() < 1e-6);
}

TEST_CASE("halving the step bound does not worsen a linear flow") {
  const ff::VectorField decay = linear_field(-Matrix::Identity(1, 1));
  Vector x0(1);
  x0 << 1.0;
  ff::IntegrationConfig coarse;
  coarse.max_step = 1e-3;
  ff::IntegrationConfig fine = coarse;
  fine.max_step = 5e-4;
  const double exact = std::exp(-1.0);
  const double err_coarse = std::abs(ff::flow(decay, x0, 0.0, 1.0, coarse)(0) - exact);
  const double err_fine = std::abs(ff::flow(decay, x0, 0.0, 1.0, fine)(0) - exact);
  CHECK(err_fine <= err_coarse + 1e-14);
}

TEST_CASE("flow satisfies the semigroup property") {
  Matrix a(2, 2);
  a << -0.3, 1.2, -1.0, -0.1;
  const ff::VectorField field = linear_field(a);
  Vector x0(2);
  x0 << 0.7, -0.4;
  ff::IntegrationConfig cfg;
  const Vector direct = ff::flow(field, x0, 0.0, 1.5, cfg);
  const Vector mid = ff::flow(field, x0, 0.0, 0.6, cfg);
  const Vector chained = ff::flow(field, mid, 0.6, 1.5, cfg);
  CHECK((direct - chained).norm() <= 10.0 * (cfg.abs_tol + cfg.rel_tol));
}

TEST_CASE("flow reports escape and step limits as typed errors") {
  // x' = x^2 from 2 blows up at t = 0.5.
  const ff::VectorField blowup{1,
                               [](const Vector& x, double) {
                                 Vector dx(1);
                                 dx(0) = x(0) * x(0);
                                 return dx;
                               },
                               nullptr};
  Vector x0(1);
  x0 << 2.0;
  CHECK_THROWS_AS(ff::flow(blowup, x0, 0.0, 1.0), ff::NonFiniteState);

  ff::IntegrationConfig tiny;
  tiny.max_steps = 10;
  CHECK_THROWS_AS(ff::flow(linear_field(-Matrix::Identity(1, 1)), x0, 0.0, 1.0, tiny),
                  ff::StepLimitExceeded);
}

TEST_CASE("sensitivity of the zero field is the identity") {
  Vector x0(2);
  x0 << 1.0, 2.0;
  const auto [xe, phi] = ff::flow_sensitivity(zero_field(2), x0, 0.0, 1.0);
  CHECK(xe.isApprox(x0));
  CHECK(phi.isApprox(Matrix::Identity(2, 2)));
}

TEST_CASE("sensitivity of a linear field is the matrix exponential") {
  Matrix a(3, 3);
  a << -0.2, 1.0, 0.0, -1.0, -0.2, 0.3, 0.1, 0.0, -0.5;
  const auto [xe, phi] = ff::flow_sensitivity(linear_field(a), Vector::Ones(3), 0.0, 1.3);
  CHECK((phi - ff::mat_exp(a, 1.3)).norm() < 1e-6);
  CHECK((xe - ff::mat_exp(a, 1.3) * Vector::Ones(3)).norm() < 1e-6);
}

TEST_CASE("sensitivity matches finite differences on the closed-loop pendulum") {
  const ff::ControlSystem sys = ff::make_pendulum(1.0, 0.5, 9.81, 0.1);
  Matrix k(1, 2);
  k << 20.0, 4.0;
  const ff::VectorField field = ff::close_loop(
      sys, [k](const Vector& x, double) { return (-k * x).eval(); },
      [k](const Vector&, double) { return (-k).eval(); });
  ff::CounterRng rng(21, 0);
  for (int trial = 0; trial < 5; ++trial) {
    Vector x0(2);
    x0 << rng.normal(), rng.normal();
    const auto [xe, phi] = ff::flow_sensitivity(field, x0, 0.0, 0.4);
    Matrix fd(2, 2);
    for (int j = 0; j < 2; ++j) {
      const double step = 1e-6 * std::max(1.0, std::abs(x0(j)));
      Vector hi = x0, lo = x0;
      hi(j) += step;
      lo(j) -= step;
      fd.col(j) = (ff::flow(field, hi, 0.0, 0.4) - ff::flow(field, lo, 0.0, 0.4)) / (2.0 * step);
    }
    CHECK((phi - fd).norm() <= 1e-4 * std::max(1.0, phi.norm()));
  }
}

TEST_CASE("sensitivity determinant follows the trace integral") {
  // det Phi = exp(integral tr A) for constant A (Abel-Liouville).
  ff::CounterRng rng(22, 0);
  for (int n : {1, 2, 3}) {
    Matrix a(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
    }
    const auto [xe, phi] = ff::flow_sensitivity(linear_field(a), Vector::Ones(n), 0.0, 0.7);
    CHECK(phi.determinant() ==
          doctest::Approx(std::exp(0.7 * a.trace())).epsilon(1e-5));
  }
}

TEST_CASE("dense output stores knots exactly and interpolates well") {
  const ff::VectorField decay = linear_field(-Matrix::Identity(1, 1));
  Vector x0(1);
  x0 << 1.0;
  const ff::Interpolant dense = ff::integrate_dense(decay, x0, 0.0, 1.0);
  CHECK(std::abs(dense.eval(0.5)(0) - std::exp(-0.5)) < 1e-6);
  // Knot evaluation reproduces stored values bit-exactly.
  const auto& ts = dense.knots();
  const auto& xs = dense.values();
  for (std::size_t i = 0; i < ts.size(); i += 7) {
    CHECK(dense.eval(ts[i])(0) == xs[i](0));
  }
  // Constant field gives a constant interpolant.
  const ff::Interpolant flat = ff::integrate_dense(zero_field(2), Vector::Ones(2), 0.0, 0.3);
  CHECK(flat.eval(0.17).isApprox(Vector::Ones(2)));

  CHECK_THROWS_AS(dense.eval(2.0), ff::OutOfDomain);
  CHECK_THROWS_AS(ff::integrate_dense(decay, x0, 1.0, 1.0), ff::InvalidArgument);
}

TEST_CASE("interpolant derivative is the Hermite derivative") {
  std::vector<double> ts = {0.0, 1.0, 2.0};
  std::vector<Vector> xs = {Vector::Zero(1), Vector::Ones(1), Vector::Zero(1)};
  std::vector<Vector> fs = {Vector::Ones(1), Vector::Zero(1), -Vector::Ones(1)};
  const ff::Interpolant interp(ts, xs, fs);
  CHECK(interp.eval_derivative(0.0)(0) == doctest::Approx(1.0));
  CHECK(interp.eval_derivative(1.0)(0) == doctest::Approx(0.0));
  const double fd = (interp.eval(0.500001)(0) - interp.eval(0.499999)(0)) / 2e-6;
  CHECK(interp.eval_derivative(0.5)(0) == doctest::Approx(fd).epsilon(1e-6));
}
