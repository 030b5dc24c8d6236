#pragma once

#include <cstdint>

#include "mfda/linalg.hpp"
#include "mfda/rng.hpp"

namespace mfda::ens {

enum class Space { kPrincipal, kControl, kObservation };

/// d x N matrix of realizations, one member per column.
struct Ensemble {
  Matrix members;
  Space space = Space::kPrincipal;

  Eigen::Index dim() const noexcept { return members.rows(); }
  Eigen::Index size() const noexcept { return members.cols(); }
};

struct InflationConfig {
  double alpha_x = 1.0;  ///< principal and control anomalies
  double alpha_u = 1.0;  ///< ancillary anomalies

  void validate() const;
};

struct PerturbedObsConfig {
  double s = 1.0;  ///< ancillary noise scale: Y^u ~ N(y, s R)
  std::uint64_t seed = 0;

  void validate() const;
};

Vector ensemble_mean(const Matrix& members);
inline Vector ensemble_mean(const Ensemble& e) { return ensemble_mean(e.members); }

/// Members minus their mean.
Matrix anomalies(const Matrix& members);

/// (1/(N-1)) sum_e (a_e - mean a)(b_e - mean b)^T.
Matrix cross_cov(const Matrix& a, const Matrix& b);
inline Matrix cross_cov(const Ensemble& a, const Ensemble& b) { return cross_cov(a.members, b.members); }

/// Mean + alpha * anomalies.
Matrix inflate(const Matrix& members, double alpha);
inline Ensemble inflate(const Ensemble& e, double alpha) { return {inflate(e.members, alpha), e.space}; }

/// Replaces the ensemble mean by `mean`, keeping the anomalies.
void set_mean(Matrix& members, const Vector& mean);

/// N draws from N(y, scale * R) via the Cholesky factor of R.
/// Throws DecompositionError when R is not symmetric positive definite.
Ensemble sample_perturbed_observations(const Vector& y, const Matrix& R, Eigen::Index N, double scale,
                                       RandomStream& rng);

}  // namespace mfda::ens
