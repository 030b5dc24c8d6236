#include "mfda/ensemble.hpp"

#include <cmath>

#include "mfda/errors.hpp"

namespace mfda::ens {

void InflationConfig::validate() const {
  if (!(alpha_x >= 1.0) || !(alpha_u >= 1.0)) throw InvalidArgument("InflationConfig: factors must be >= 1");
}

void PerturbedObsConfig::validate() const {
  if (!(s > 0.0)) throw InvalidArgument("PerturbedObsConfig: s must be positive");
}

Vector ensemble_mean(const Matrix& members) {
  if (members.cols() < 1) throw InvalidArgument("ensemble_mean: empty ensemble");
  return members.rowwise().mean();
}

Matrix anomalies(const Matrix& members) { return members.colwise() - ensemble_mean(members); }

Matrix cross_cov(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw InvalidArgument("cross_cov: ensembles differ in size");
  if (a.cols() < 2) throw InvalidArgument("cross_cov: need at least two members");
  return anomalies(a) * anomalies(b).transpose() / static_cast<double>(a.cols() - 1);
}

Matrix inflate(const Matrix& members, double alpha) {
  if (!(alpha >= 1.0)) throw InvalidArgument("inflate: alpha must be >= 1");
  if (alpha == 1.0) return members;
  const Vector mean = ensemble_mean(members);
  Matrix out = (alpha * (members.colwise() - mean)).colwise() + mean;
  return out;
}

void set_mean(Matrix& members, const Vector& mean) {
  if (mean.size() != members.rows()) throw InvalidArgument("set_mean: dimension mismatch");
  const Vector shift = mean - ensemble_mean(members);
  members.colwise() += shift;
}

Ensemble sample_perturbed_observations(const Vector& y, const Matrix& R, Eigen::Index N, double scale,
                                       RandomStream& rng) {
  if (N < 1) throw InvalidArgument("sample_perturbed_observations: N must be >= 1");
  if (R.rows() != y.size() || R.cols() != y.size()) throw InvalidArgument("sample_perturbed_observations: R shape");
  if (!(scale > 0.0)) throw InvalidArgument("sample_perturbed_observations: scale must be positive");
  if (relative_asymmetry(R) > 1e-12) throw DecompositionError("sample_perturbed_observations: R is not symmetric");
  Eigen::LLT<Matrix> llt(R);
  if (llt.info() != Eigen::Success) throw DecompositionError("sample_perturbed_observations: R is not positive definite");
  const Matrix noise = rng.standard_normal(y.size(), N);
  Matrix draws = llt.matrixL() * noise;
  draws *= std::sqrt(scale);
  draws.colwise() += y;
  return {std::move(draws), Space::kObservation};
}

}  // namespace mfda::ens
