#pragma once

#include <Eigen/Dense>

namespace mfda {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Column index of the first non-finite entry, or -1.
Eigen::Index first_nonfinite_column(const Matrix& m);

bool all_finite(const Matrix& m);

/// Largest |A - A^T| entry divided by max(1, max |A|).
double relative_asymmetry(const Matrix& a);

/// Solves K * S = P for K where S is symmetric positive definite, i.e.
/// returns P * S^{-1}. On Cholesky failure a single jitter of
/// 1e-10 * trace(S) / m on the diagonal is tried before giving up with
/// LinearSolveError.
Matrix right_solve_spd(const Matrix& p, const Matrix& s);

}  // namespace mfda
