#pragma once

#include <Eigen/Dense>

namespace ff {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative asymmetry max_ij |m_ij - m_ji| / max(1, max_ij |m_ij|).
double asymmetry(const Eigen::Ref<const Matrix>& m);

/// Throws NotSymmetric when the relative asymmetry exceeds 1e-12.
void require_symmetric(const Eigen::Ref<const Matrix>& m, const char* what);

/// e^{At} by scaling-and-squaring with the order-13 diagonal Pade
/// approximant (squaring kicks in above ||At||_1 ~ 5.37).
Matrix mat_exp(const Eigen::Ref<const Matrix>& a, double t = 1.0);

/// Lower-triangular L with L L^T = S. Throws NotPositiveDefinite when a
/// pivot is not positive.
Matrix chol_lower(const Eigen::Ref<const Matrix>& s);

struct EigPair {
  double value = 0.0;
  Vector vector;
};

/// Largest eigenvalue of a symmetric matrix and a unit eigenvector for it.
EigPair sym_eig_max(const Eigen::Ref<const Matrix>& s);

/// lambda_max(L^{-1} Q L^{-T}) with L L^T = S, i.e. the largest generalized
/// eigenvalue of (Q, S). Equals max x^T Q x over {x^T S x = 1}.
double gen_eig_max(const Eigen::Ref<const Matrix>& q, const Eigen::Ref<const Matrix>& s);

/// Solves S x = b for symmetric positive definite S.
Vector solve_spd(const Eigen::Ref<const Matrix>& s, const Eigen::Ref<const Vector>& b);

}  // namespace ff
