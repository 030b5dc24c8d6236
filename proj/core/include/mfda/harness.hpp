#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mfda/autoencoder.hpp"
#include "mfda/dynamics.hpp"
#include "mfda/filters.hpp"
#include "mfda/rom_pod.hpp"

namespace mfda::harness {

/// The assimilation methods compared in the twin experiments, plus an
/// unassimilated ensemble for reference.
enum class Method { kEnKF, kMFEnKFPod, kNLMFEnKFNN, kMFEnKFNN, kFreeRun };

std::string_view method_name(Method m);
Method parse_method(std::string_view name);

struct ExperimentConfig {
  Method method = Method::kEnKF;
  dynamics::Lorenz96Params model;
  dynamics::IntegratorConfig integrator;  ///< one window = one observation interval

  int r = 28;
  int n_x = 32;
  int n_u = 25;
  double alpha_x = 1.05;
  double alpha_u = 1.01;
  double enkf_alpha = 1.07;  ///< EnKF baseline inflation
  double s = 1.0;            ///< ancillary perturbed-observation scale
  filters::MeanAdjustment mean_adjustment = filters::MeanAdjustment::kControlSpaceUnbiased;

  double obs_variance = 1.0;                   ///< R = obs_variance * I
  std::vector<Eigen::Index> observed;          ///< empty = observe every component
  double initial_spread = 1.0;                 ///< std of initial member perturbations
  double truth_burn_in = 100.0;                ///< attractor spin-up of each truth run

  int n_steps = 1100;
  int spinup = 100;
  int realizations = 20;
  std::uint64_t seed = 1;

  double climatological_std = 3.6;
  double divergence_factor = 10.0;

  /// Artifact locations; "{r}" is replaced by the reduced dimension.
  std::string pod_path = "artifacts/pod_r{r}.csv";
  std::string ae_path = "artifacts/ae_r{r}.bin";

  void validate() const;
  filters::ObservationModel observation_model() const;
  std::string resolved_pod_path() const;
  std::string resolved_ae_path() const;
};

ExperimentConfig experiment_config_from_json(std::string_view json_text);
ExperimentConfig experiment_config_from_json(std::string_view json_text, const ExperimentConfig& defaults);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

/// Surrogates resolved for one reduced dimension.
struct Artifacts {
  std::optional<rom::QuadraticROM> pod;
  std::optional<ae::AutoencoderParams> autoencoder;
  std::vector<std::string> hashes;  ///< "path:hash" entries for manifests
};

/// Loads whatever `cfg.method` needs; throws std::runtime_error naming the
/// missing file otherwise.
Artifacts load_artifacts(const ExperimentConfig& cfg);

struct RunResult {
  int realization = 0;
  double rmse = 0.0;                ///< over steps after spinup; NaN when diverged
  std::vector<double> step_errors;  ///< analysis RMSE per assimilation step
  bool diverged = false;
  int diverged_step = -1;
  double wall_seconds = 0.0;
};

/// sqrt( sum (estimate - truth)^2 / (N n) ) over the columns of both.
double rmse(const Matrix& estimates, const Matrix& truth);

/// sum y_rec^2 / sum y^2.
double kinetic_energy_ratio(const Matrix& reconstructions, const Matrix& full);

/// Truth trajectory of one realization: n x (n_steps + 1), column 0 is the
/// initial state. Depends only on (model, integrator, seed, realization).
Matrix truth_trajectory(const ExperimentConfig& cfg, int realization);

/// Observations y_i = H truth_i + eta_i for i = 1..n_steps (column i-1).
Matrix synthesize_observations(const ExperimentConfig& cfg, const Matrix& truth, int realization);

RunResult run_twin_experiment(const ExperimentConfig& cfg, const Artifacts& artifacts, int realization);

/// All realizations of one configuration, in order.
std::vector<RunResult> run_realizations(const ExperimentConfig& cfg, const Artifacts& artifacts);

struct SweepRow {
  Method method = Method::kEnKF;
  int r = 0;
  int n_x = 0;
  int n_u = 0;
  double alpha_x = 1.0;
  double alpha_u = 1.0;
  int realizations = 0;
  double mean_rmse = 0.0;  ///< over non-diverged realizations (NaN when all diverged)
  double two_sigma = 0.0;  ///< two sample standard deviations of the RMSE
  double divergence_fraction = 0.0;
};

struct SweepResult {
  std::string axes;  ///< "r" or "n_x,alpha_x"
  std::vector<SweepRow> rows;
};

SweepRow summarize(const ExperimentConfig& cfg, const std::vector<RunResult>& runs);

/// Called after each finished grid cell.
using SweepProgress = std::function<void(const SweepRow&)>;

/// MFEnKF(POD), NL-MFEnKF(NN), MFEnKF(NN) and EnKF over `rs`, with
/// N_U = r - 3. EnKF does not depend on r; it is run once and repeated on
/// every r.
SweepResult sweep_rom_dimension(const ExperimentConfig& base, const std::vector<int>& rs,
                                const SweepProgress& progress = {});

/// The four methods over N_X x alpha_X at fixed r, N_U and alpha_U. For the
/// EnKF, alpha_X is its inflation.
SweepResult sweep_ensemble_inflation(const ExperimentConfig& base, const std::vector<int>& n_xs,
                                     const std::vector<double>& alphas, const SweepProgress& progress = {});

std::string sweep_csv(const SweepResult& sweep);
std::string runs_csv(const ExperimentConfig& cfg, const std::vector<RunResult>& runs);

struct EnergyRow {
  int r = 0;
  double pod = 0.0;
  std::optional<double> nn;
};

/// Relative kinetic energy of POD reconstructions Phi Theta X and, when
/// given, autoencoder reconstructions phi(theta(X)).
EnergyRow rom_energy(const Matrix& snapshots, const rom::LinearCoupling& pod,
                     const ae::AutoencoderParams* autoencoder = nullptr);

std::string energy_csv(const std::vector<EnergyRow>& rows);

std::string replace_r(std::string pattern, int r);

}  // namespace mfda::harness
