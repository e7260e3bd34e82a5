#include "ff/linoracle.hpp"

#include <cmath>

#include "ff/errors.hpp"

namespace ff {

EllipsoidSet propagate_ellipsoid(const Matrix& a, const EllipsoidSet& e, double t) {
  if (a.rows() != e.q.rows() || a.rows() != e.center.size()) {
    throw InvalidArgument("propagate_ellipsoid: dimension mismatch");
  }
  require_symmetric(e.q, "propagate_ellipsoid");
  const Matrix phi = mat_exp(a, t);
  EllipsoidSet out;
  out.center = phi * e.center;
  out.q = phi * e.q * phi.transpose();
  out.q = 0.5 * (out.q + out.q.transpose());
  return out;
}

std::vector<double> optimal_rho_sequence(const Matrix& a, const Matrix& s,
                                         const EllipsoidSet& goal,
                                         const std::vector<double>& grid) {
  if (grid.size() < 2) throw InvalidArgument("optimal_rho_sequence: need at least two grid times");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) {
      throw InvalidArgument("optimal_rho_sequence: grid must be strictly increasing");
    }
  }
  require_symmetric(s, "optimal_rho_sequence: S");

  // Q^{-1} of the goal, via its Cholesky factor.
  const Matrix l = chol_lower(goal.q);
  Matrix qinv = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(goal.q.rows(), goal.q.rows()));
  qinv = l.transpose().triangularView<Eigen::Upper>().solve(qinv);
  qinv = 0.5 * (qinv + qinv.transpose()).eval();

  std::vector<double> rho(grid.size());
  // Terminal level: {x^T S x <= rho_N} inside the goal ellipsoid.
  rho.back() = 1.0 / gen_eig_max(qinv, s);

  // One-step worst-case growth of the S-norm, cached per step length.
  double cached_h = -1.0;
  double cached_lambda = 0.0;
  for (std::size_t i = grid.size() - 1; i-- > 0;) {
    const double h = grid[i + 1] - grid[i];
    if (std::abs(h - cached_h) > 1e-12 * std::max(1.0, h)) {
      const Matrix phi = mat_exp(a, h);
      Matrix w = phi.transpose() * s * phi;
      w = 0.5 * (w + w.transpose()).eval();
      cached_lambda = gen_eig_max(w, s);
      cached_h = h;
    }
    rho[i] = rho[i + 1] / cached_lambda;
  }
  return rho;
}

}  // namespace ff
