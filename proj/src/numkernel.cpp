#include "ff/numkernel.hpp"

#include <cmath>

#include "ff/errors.hpp"

namespace ff {

namespace {

constexpr double kSymTol = 1e-12;

void require_square_finite(const Eigen::Ref<const Matrix>& m, const char* what) {
  if (m.rows() != m.cols()) throw InvalidArgument(std::string(what) + ": matrix must be square");
  if (!m.allFinite()) throw InvalidArgument(std::string(what) + ": matrix has non-finite entries");
}

Matrix symmetrized(const Eigen::Ref<const Matrix>& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

double asymmetry(const Eigen::Ref<const Matrix>& m) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose().eval()).cwiseAbs().maxCoeff() / scale;
}

void require_symmetric(const Eigen::Ref<const Matrix>& m, const char* what) {
  require_square_finite(m, what);
  if (asymmetry(m) > kSymTol) throw NotSymmetric(std::string(what) + ": matrix is not symmetric");
}

Matrix mat_exp(const Eigen::Ref<const Matrix>& a, double t) {
  require_square_finite(a, "mat_exp");
  if (!std::isfinite(t)) throw InvalidArgument("mat_exp: non-finite time");
  const Eigen::Index n = a.rows();

  Matrix m = a * t;
  const double norm1 = n == 0 ? 0.0 : m.cwiseAbs().colwise().sum().maxCoeff();

  // theta_13 for the order-13 diagonal Pade approximant.
  constexpr double kTheta13 = 5.371920351148152;
  int squarings = 0;
  if (norm1 > kTheta13) {
    squarings = static_cast<int>(std::ceil(std::log2(norm1 / kTheta13)));
    m /= std::pow(2.0, squarings);
  }

  static const double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                             1187353796428800.0,  129060195264000.0,   10559470521600.0,
                             670442572800.0,      33522128640.0,       1323241920.0,
                             40840800.0,          960960.0,            16380.0,
                             182.0,               1.0};

  const Matrix ident = Matrix::Identity(n, n);
  const Matrix m2 = m * m;
  const Matrix m4 = m2 * m2;
  const Matrix m6 = m4 * m2;

  const Matrix u = m * (m6 * (b[13] * m6 + b[11] * m4 + b[9] * m2) + b[7] * m6 + b[5] * m4 +
                        b[3] * m2 + b[1] * ident);
  const Matrix v =
      m6 * (b[12] * m6 + b[10] * m4 + b[8] * m2) + b[6] * m6 + b[4] * m4 + b[2] * m2 + b[0] * ident;

  Matrix result = (v - u).partialPivLu().solve(v + u);
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

Matrix chol_lower(const Eigen::Ref<const Matrix>& s) {
  require_symmetric(s, "chol_lower");
  const Eigen::Index n = s.rows();
  Matrix l = symmetrized(s);
  // Classic left-looking Cholesky; keeps the pivot test explicit.
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = l(j, j) - l.row(j).head(j).squaredNorm();
    if (pivot <= 0.0) throw NotPositiveDefinite("chol_lower: non-positive pivot");
    pivot = std::sqrt(pivot);
    l(j, j) = pivot;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      l(i, j) = (l(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / pivot;
    }
    l.row(j).tail(n - j - 1).setZero();
  }
  return l;
}

EigPair sym_eig_max(const Eigen::Ref<const Matrix>& s) {
  require_symmetric(s, "sym_eig_max");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrized(s));
  if (solver.info() != Eigen::Success) throw NotConverged("sym_eig_max: eigensolver failed");
  const Eigen::Index last = s.rows() - 1;
  EigPair out;
  out.value = solver.eigenvalues()(last);
  out.vector = solver.eigenvectors().col(last);
  return out;
}

double gen_eig_max(const Eigen::Ref<const Matrix>& q, const Eigen::Ref<const Matrix>& s) {
  require_symmetric(q, "gen_eig_max");
  if (q.rows() != s.rows()) throw InvalidArgument("gen_eig_max: dimension mismatch");
  const Matrix l = chol_lower(s);
  Matrix w = l.triangularView<Eigen::Lower>().solve(symmetrized(q));
  w = l.triangularView<Eigen::Lower>().solve(w.transpose()).transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrized(w), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw NotConverged("gen_eig_max: eigensolver failed");
  return solver.eigenvalues()(s.rows() - 1);
}

Vector solve_spd(const Eigen::Ref<const Matrix>& s, const Eigen::Ref<const Vector>& b) {
  require_symmetric(s, "solve_spd");
  if (s.rows() != b.size()) throw InvalidArgument("solve_spd: dimension mismatch");
  const Matrix l = chol_lower(s);
  Vector y = l.triangularView<Eigen::Lower>().solve(b);
  return l.transpose().triangularView<Eigen::Upper>().solve(y);
}

}  // namespace ff
