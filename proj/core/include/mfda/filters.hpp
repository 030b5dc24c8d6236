#pragma once

#include <cstddef>
#include <variant>
#include <vector>

#include "mfda/autoencoder.hpp"
#include "mfda/dynamics.hpp"
#include "mfda/ensemble.hpp"
#include "mfda/linalg.hpp"
#include "mfda/rng.hpp"
#include "mfda/rom_pod.hpp"

namespace mfda::filters {

/// Linear observation operator H (m x n) with Gaussian noise N(0, R).
struct ObservationModel {
  Matrix H;
  Matrix R;

  static ObservationModel identity(Eigen::Index n, double variance = 1.0);
  /// Observes the listed state components.
  static ObservationModel select(Eigen::Index n, const std::vector<Eigen::Index>& components, double variance = 1.0);

  Eigen::Index m() const noexcept { return H.rows(); }
  Eigen::Index n() const noexcept { return H.cols(); }
  Matrix apply(const Matrix& x) const { return H * x; }
  void validate() const;
};

/// Autoencoder coupling used by the NL-MFEnKF: theta = encoder, phi = decoder.
struct NonlinearCoupling {
  ae::AutoencoderParams params;
};

/// Autoencoder surrogate assimilated by the linear MFEnKF in the principal
/// space: control ensembles are decoded, updated with Theta = Phi = I, and
/// re-encoded afterwards.
struct IdentityInPrincipal {
  ae::AutoencoderParams params;
};

using Coupling = std::variant<rom::LinearCoupling, NonlinearCoupling, IdentityInPrincipal>;

/// theta applied member-wise.
Matrix project(const Coupling& c, const Matrix& x);
/// phi applied member-wise.
Matrix interpolate(const Coupling& c, const Matrix& u);
Eigen::Index reduced_dim(const Coupling& c);
Eigen::Index full_dim(const Coupling& c);

/// Principal ensemble X (n x N_X), control ensemble U_hat (r x N_X, paired
/// with X column by column) and ancillary ensemble U (r x N_U).
struct MultifidelityState {
  ens::Ensemble x;
  ens::Ensemble u_hat;
  ens::Ensemble u;

  void validate() const;
};

enum class MeanAdjustment { kControlSpaceUnbiased, kKalmanApproximate };
enum class FilterKind { kEnKF, kMFEnKF, kNLMFEnKF };

struct FilterConfig {
  ens::InflationConfig inflation;
  ens::PerturbedObsConfig perturbed_obs;
  MeanAdjustment mean_adjustment = MeanAdjustment::kControlSpaceUnbiased;
  FilterKind kind = FilterKind::kEnKF;

  /// Checks the factors and that `coupling` suits `kind` (nullptr for EnKF).
  void validate(const Coupling* coupling = nullptr) const;
};

/// Perturbed observations for one analysis: Y^x (m x N_X) with covariance R
/// and Y^u (m x N_U) with covariance s R, drawn from separate substreams.
struct PerturbedObservations {
  Matrix principal;
  Matrix ancillary;
};

PerturbedObservations draw_perturbed_observations(const Vector& y, const ObservationModel& obs, Eigen::Index n_x,
                                                  Eigen::Index n_u, double s, const StreamKey& key);

/// Stochastic EnKF analysis of an (already inflated) forecast ensemble:
/// Xa = Xb - K (H Xb - Y), K = cov(Xb, HXb)(cov(HXb, HXb) + R)^{-1}.
Matrix enkf_analysis(const Matrix& xb, const Matrix& y_perturbed, const ObservationModel& obs);

/// Inflation by `alpha`, perturbed observations drawn from `rng`, analysis.
Matrix enkf_step(const Matrix& xb, const Vector& y, const ObservationModel& obs, double alpha, RandomStream& rng);

/// Control-variate gain S = cov(X, U_hat)(cov(U_hat, U_hat) + cov(U, U))^{-1}.
Matrix optimal_gain(const Matrix& cov_x_uhat, const Matrix& cov_uhat_uhat, const Matrix& cov_u_u);

/// Propagates X with the full-order model and U_hat, U with the surrogate.
MultifidelityState mf_forecast(const MultifidelityState& state, const dynamics::Tendency& fom,
                               const dynamics::Tendency& rom, const dynamics::IntegratorConfig& cfg,
                               std::size_t n_windows = 1);

/// Interpolated control/ancillary members and all three observation images.
struct ObservedEnsembles {
  Matrix hx;
  Matrix hu_hat;
  Matrix hu;
  Matrix u_hat_interp;  ///< phi(U_hat), n x N_X
  Matrix u_interp;      ///< phi(U), n x N_U
};

ObservedEnsembles mf_observe(const MultifidelityState& state, const Coupling& coupling, const ObservationModel& obs);

/// Five-term semi-linearized cross covariance
///   cov(a, hx) + 1/4 cov(a_hat, hu_hat) + 1/4 cov(a_anc, hu)
///   - 1/2 cov(a, hu_hat) - 1/2 cov(a_hat, hx).
Matrix semi_linear_cov(const Matrix& a, const Matrix& a_hat, const Matrix& a_anc, const Matrix& hx,
                       const Matrix& hu_hat, const Matrix& hu);

/// cov_E(HZ, HZ) + R, checked for symmetry (<= 1e-10 relative) and
/// symmetrized.
Matrix innovation_covariance(const ObservedEnsembles& o, const ObservationModel& obs);

/// MFEnKF gain K = cov_E(Z, HZ)(cov_E(HZ, HZ) + R)^{-1}.
Matrix mfenkf_gain(const Matrix& hx, const Matrix& hu_hat, const Matrix& hu, const Matrix& x,
                   const Matrix& u_hat_interp, const Matrix& u_interp, const ObservationModel& obs);

/// mean(X) - 1/2 (mean(phi(U_hat)) - mean(phi(U))).
Vector total_mean(const MultifidelityState& state, const Coupling& coupling);

/// Linear MFEnKF analysis (Linear or IdentityInPrincipal coupling):
/// inflation, the three constituent updates with K and Theta K, mean
/// correction to the total-variate mean, recorrelation U_hat <- Theta X.
MultifidelityState mfenkf_analysis(const MultifidelityState& state, const ObservationModel& obs,
                                   const Coupling& coupling, const FilterConfig& cfg,
                                   const PerturbedObservations& y_pert);

/// NL-MFEnKF analysis (Nonlinear coupling): gains K and K^theta, mean
/// correction of X, recorrelation U_hat <- theta(X), then the configured
/// ancillary mean adjustment.
MultifidelityState nlmfenkf_analysis(const MultifidelityState& state, const ObservationModel& obs,
                                     const Coupling& coupling, const FilterConfig& cfg,
                                     const PerturbedObservations& y_pert);

/// Dispatches on cfg.kind (kMFEnKF or kNLMFEnKF).
MultifidelityState mf_analysis(const MultifidelityState& state, const ObservationModel& obs, const Coupling& coupling,
                               const FilterConfig& cfg, const PerturbedObservations& y_pert);

}  // namespace mfda::filters
