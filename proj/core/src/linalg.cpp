#include "mfda/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "mfda/errors.hpp"

namespace mfda {

Eigen::Index first_nonfinite_column(const Matrix& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (!m.col(j).allFinite()) return j;
  }
  return -1;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

double relative_asymmetry(const Matrix& a) {
  if (a.rows() != a.cols()) throw InvalidArgument("relative_asymmetry: matrix is not square");
  if (a.size() == 0) return 0.0;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - a.transpose()).cwiseAbs().maxCoeff() / scale;
}

Matrix right_solve_spd(const Matrix& p, const Matrix& s) {
  if (s.rows() != s.cols()) throw InvalidArgument("right_solve_spd: S is not square");
  if (p.cols() != s.rows()) throw InvalidArgument("right_solve_spd: P and S are incompatible");
  if (!s.allFinite() || !p.allFinite()) throw LinearSolveError("right_solve_spd: non-finite input");

  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) {
    const double m = static_cast<double>(s.rows());
    const double jitter = 1e-10 * std::abs(s.trace()) / m;
    Matrix jittered = s;
    jittered.diagonal().array() += jitter;
    llt.compute(jittered);
    if (llt.info() != Eigen::Success || jitter == 0.0) {
      throw LinearSolveError("right_solve_spd: matrix is not positive definite (after jitter)");
    }
  }
  // K S = P  <=>  S K^T = P^T (S symmetric)
  return llt.solve(p.transpose()).transpose();
}

}  // namespace mfda
