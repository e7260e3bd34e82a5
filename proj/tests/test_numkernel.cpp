#include <doctest.h>

#include <cmath>

#include "ff/errors.hpp"
#include "ff/numkernel.hpp"
#include "ff/rng.hpp"

using ff::Matrix;
using ff::Vector;

namespace {

Matrix random_symmetric(int n, ff::CounterRng& rng) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      m(i, j) = 2.0 * rng.uniform01() - 1.0;
      m(j, i) = m(i, j);
    }
  }
  return m;
}

Matrix random_spd(int n, ff::CounterRng& rng) {
  Matrix a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a(i, j) = 2.0 * rng.uniform01() - 1.0;
  }
  return a * a.transpose() + 0.1 * static_cast<double>(n) * Matrix::Identity(n, n);
}

// Independent power-iteration estimate of the top eigenvalue (shifted so the
// largest eigenvalue dominates in magnitude).
double power_iteration(const Matrix& s, int iters = 5000) {
  ff::CounterRng rng(99, 0);
  Vector v(s.rows());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  v.normalize();
  const double shift = s.cwiseAbs().rowwise().sum().maxCoeff() + 1.0;
  for (int i = 0; i < iters; ++i) v = (s * v + shift * v).normalized();
  return v.dot(s * v);
}

}  // namespace

TEST_CASE("mat_exp at t = 0 is the identity") {
  ff::CounterRng rng(1, 0);
  const Matrix a = random_symmetric(4, rng);
  CHECK(ff::mat_exp(a, 0.0).isApprox(Matrix::Identity(4, 4), 1e-15));
}

TEST_CASE("mat_exp of a nilpotent matrix terminates the series") {
  Matrix a(2, 2);
  a << 0, 1, 0, 0;
  Matrix expected(2, 2);
  expected << 1, 1, 0, 1;
  CHECK((ff::mat_exp(a, 1.0) - expected).norm() == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("mat_exp matches the scalar exponential") {
  Matrix a(1, 1);
  a << -1.0;
  CHECK(ff::mat_exp(a, 1.0)(0, 0) == doctest::Approx(0.36787944117144233).epsilon(1e-10));
}

TEST_CASE("mat_exp inverse and semigroup identities") {
  ff::CounterRng rng(2, 0);
  for (int trial = 0; trial < 5; ++trial) {
    Matrix a(5, 5);
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) a(i, j) = 4.0 * rng.uniform01() - 2.0;
    }
    const Matrix fwd = ff::mat_exp(a, 1.0);
    const Matrix bwd = ff::mat_exp(a, -1.0);
    CHECK((fwd * bwd - Matrix::Identity(5, 5)).norm() < 1e-8);
    const Matrix half = ff::mat_exp(a, 0.5);
    CHECK((half * half - fwd).norm() < 1e-8 * fwd.norm());
  }
}

TEST_CASE("mat_exp rejects bad input") {
  CHECK_THROWS_AS(ff::mat_exp(Matrix::Zero(2, 3), 1.0), ff::InvalidArgument);
  Matrix nan_mat = Matrix::Zero(2, 2);
  nan_mat(0, 0) = std::nan("");
  CHECK_THROWS_AS(ff::mat_exp(nan_mat, 1.0), ff::InvalidArgument);
}

TEST_CASE("chol_lower on identity and diagonal matrices") {
  CHECK(ff::chol_lower(Matrix::Identity(3, 3)).isApprox(Matrix::Identity(3, 3)));
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 4.0;
  d(1, 1) = 9.0;
  Matrix expected = Matrix::Zero(2, 2);
  expected(0, 0) = 2.0;
  expected(1, 1) = 3.0;
  CHECK(ff::chol_lower(d).isApprox(expected));
}

TEST_CASE("chol_lower reconstructs random SPD matrices") {
  ff::CounterRng rng(3, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix s = random_spd(5, rng);
    const Matrix l = ff::chol_lower(s);
    CHECK((l * l.transpose() - s).norm() <= 1e-12 * s.norm());
    for (int i = 0; i < 5; ++i) {
      CHECK(l(i, i) > 0.0);
      for (int j = i + 1; j < 5; ++j) CHECK(l(i, j) == 0.0);
    }
  }
}

TEST_CASE("chol_lower flags indefinite and asymmetric input") {
  Matrix s = Matrix::Identity(3, 3);
  s(1, 1) = -2.0;
  CHECK_THROWS_AS(ff::chol_lower(s), ff::NotPositiveDefinite);
  Matrix asym = Matrix::Identity(3, 3);
  asym(0, 1) = 1e-3;
  CHECK_THROWS_AS(ff::chol_lower(asym), ff::NotSymmetric);
}

TEST_CASE("sym_eig_max on identity and diagonal matrices") {
  const auto [value, vector] = ff::sym_eig_max(Matrix::Identity(4, 4));
  CHECK(value == doctest::Approx(1.0));
  CHECK(vector.norm() == doctest::Approx(1.0));

  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 1.0, 5.0, 2.0;
  const auto [v5, e2] = ff::sym_eig_max(d);
  CHECK(v5 == doctest::Approx(5.0));
  CHECK(std::abs(e2(1)) == doctest::Approx(1.0));
}

TEST_CASE("sym_eig_max agrees with independent oracles on random input") {
  ff::CounterRng rng(4, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix s = random_symmetric(6, rng);
    const auto [value, vector] = ff::sym_eig_max(s);
    CHECK((s * vector - value * vector).norm() <= 1e-10 * s.norm());
    CHECK(vector.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(value == doctest::Approx(power_iteration(s)).epsilon(1e-9));
    // Sampled Rayleigh quotients bound it from below and never exceed it.
    double best = -1e300;
    for (int i = 0; i < 100000; ++i) {
      Vector v(6);
      for (int k = 0; k < 6; ++k) v(k) = rng.normal();
      v.normalize();
      best = std::max(best, v.dot(s * v));
    }
    CHECK(best <= value + 1e-12);
    CHECK(value - best < 0.05 * std::max(1.0, std::abs(value)));
  }
}

TEST_CASE("sym_eig_max rejects asymmetric input") {
  Matrix s = Matrix::Identity(2, 2);
  s(0, 1) = 1e-6;
  CHECK_THROWS_AS(ff::sym_eig_max(s), ff::NotSymmetric);
}

TEST_CASE("gen_eig_max on scaled identities") {
  CHECK(ff::gen_eig_max(Matrix::Identity(3, 3), Matrix::Identity(3, 3)) == doctest::Approx(1.0));
  CHECK(ff::gen_eig_max(Matrix::Identity(3, 3), 2.0 * Matrix::Identity(3, 3)) ==
        doctest::Approx(0.5));
}

TEST_CASE("gen_eig_max agrees with sampling over the S-unit shell") {
  ff::CounterRng rng(5, 0);
  const Matrix q = random_symmetric(4, rng);
  const Matrix s = random_spd(4, rng);
  const double lambda = ff::gen_eig_max(q, s);
  const Matrix l = ff::chol_lower(s);
  double best = -1e300;
  for (int i = 0; i < 100000; ++i) {
    Vector u(4);
    for (int k = 0; k < 4; ++k) u(k) = rng.normal();
    u.normalize();
    Vector x = l.transpose().triangularView<Eigen::Upper>().solve(u);
    best = std::max(best, x.dot(q * x));
  }
  CHECK(best <= lambda + 1e-12);
  CHECK(lambda - best < 0.05 * std::max(1.0, std::abs(lambda)));
}

TEST_CASE("gen_eig_max is invariant under simultaneous congruence") {
  ff::CounterRng rng(6, 0);
  const Matrix q = random_symmetric(4, rng);
  const Matrix s = random_spd(4, rng);
  Matrix t(4, 4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) t(i, j) = rng.normal();
  }
  t += 4.0 * Matrix::Identity(4, 4);
  const Matrix qt = 0.5 * (t.transpose() * q * t + (t.transpose() * q * t).transpose());
  const Matrix st = 0.5 * (t.transpose() * s * t + (t.transpose() * s * t).transpose());
  CHECK(ff::gen_eig_max(qt, st) == doctest::Approx(ff::gen_eig_max(q, s)).epsilon(1e-8));
}

TEST_CASE("solve_spd solves simple and random systems") {
  Vector b(2);
  b << 2.0, 4.0;
  Matrix d = Matrix::Zero(2, 2);
  d.diagonal() << 2.0, 4.0;
  CHECK(ff::solve_spd(d, b).isApprox(Vector::Ones(2)));
  CHECK(ff::solve_spd(Matrix::Identity(2, 2), b).isApprox(b));

  ff::CounterRng rng(7, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix s = random_spd(8, rng);
    Vector rhs(8);
    for (int k = 0; k < 8; ++k) rhs(k) = rng.normal();
    const Vector x = ff::solve_spd(s, rhs);
    CHECK((s * x - rhs).norm() <= 1e-10 * rhs.norm());
  }
  CHECK_THROWS_AS(ff::solve_spd(-Matrix::Identity(2, 2), b), ff::NotPositiveDefinite);
}
