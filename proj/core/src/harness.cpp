#include "mfda/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "mfda/errors.hpp"
#include "mfda/io.hpp"
#include "mfda/rng.hpp"

namespace mfda::harness {

namespace {

struct MethodName {
  Method method;
  std::string_view name;
};

constexpr MethodName kMethodNames[] = {
    {Method::kEnKF, "enkf"},
    {Method::kMFEnKFPod, "mfenkf-pod"},
    {Method::kNLMFEnKFNN, "nlmfenkf-nn"},
    {Method::kMFEnKFNN, "mfenkf-nn"},
    {Method::kFreeRun, "free-run"},
};

bool needs_pod(Method m) { return m == Method::kMFEnKFPod; }
bool needs_ae(Method m) { return m == Method::kNLMFEnKFNN || m == Method::kMFEnKFNN; }
bool is_multifidelity(Method m) { return needs_pod(m) || needs_ae(m); }

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  // Shortest text that parses back to the same double.
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string_view method_name(Method m) {
  for (const auto& entry : kMethodNames) {
    if (entry.method == m) return entry.name;
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (const auto& entry : kMethodNames) {
    if (entry.name == name) return entry.method;
  }
  throw InvalidArgument("unknown method '" + std::string(name) +
                        "' (expected enkf, mfenkf-pod, nlmfenkf-nn, mfenkf-nn or free-run)");
}

std::string replace_r(std::string pattern, int r) {
  const std::string token = "{r}";
  for (auto pos = pattern.find(token); pos != std::string::npos; pos = pattern.find(token, pos)) {
    pattern.replace(pos, token.size(), std::to_string(r));
  }
  return pattern;
}

void ExperimentConfig::validate() const {
  model.validate();
  integrator.validate();
  if (n_steps <= spinup) throw InvalidArgument("ExperimentConfig: n_steps must exceed spinup");
  if (spinup < 0) throw InvalidArgument("ExperimentConfig: spinup must be non-negative");
  if (realizations < 1) throw InvalidArgument("ExperimentConfig: realizations must be >= 1");
  if (n_x < 2) throw InvalidArgument("ExperimentConfig: n_x must be >= 2");
  if (is_multifidelity(method) && n_u < 2) throw InvalidArgument("ExperimentConfig: n_u must be >= 2");
  if (is_multifidelity(method) && (r < 1 || r > model.n)) throw InvalidArgument("ExperimentConfig: r out of range");
  if (!(alpha_x >= 1.0) || !(alpha_u >= 1.0) || !(enkf_alpha >= 1.0)) {
    throw InvalidArgument("ExperimentConfig: inflation factors must be >= 1");
  }
  if (!(s > 0.0)) throw InvalidArgument("ExperimentConfig: s must be positive");
  if (!(obs_variance > 0.0)) throw InvalidArgument("ExperimentConfig: obs_variance must be positive");
  if (!(initial_spread >= 0.0)) throw InvalidArgument("ExperimentConfig: initial_spread must be non-negative");
  if (!(climatological_std > 0.0) || !(divergence_factor > 0.0)) {
    throw InvalidArgument("ExperimentConfig: divergence threshold must be positive");
  }
  for (const auto k : observed) {
    if (k < 0 || k >= model.n) throw InvalidArgument("ExperimentConfig: observed component out of range");
  }
}

filters::ObservationModel ExperimentConfig::observation_model() const {
  if (observed.empty()) return filters::ObservationModel::identity(model.n, obs_variance);
  return filters::ObservationModel::select(model.n, observed, obs_variance);
}

std::string ExperimentConfig::resolved_pod_path() const { return replace_r(pod_path, r); }
std::string ExperimentConfig::resolved_ae_path() const { return replace_r(ae_path, r); }

namespace {

template <class T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

const std::vector<std::string> kConfigKeys = {
    "method", "n", "F", "dt", "steps_per_window", "r", "n_x", "n_u", "alpha_x", "alpha_u", "enkf_alpha", "s",
    "mean_adjustment", "obs_variance", "observed", "initial_spread", "truth_burn_in", "n_steps", "spinup",
    "realizations", "seed", "climatological_std", "divergence_factor", "pod_path", "ae_path"};

}  // namespace

ExperimentConfig experiment_config_from_json(std::string_view json_text) {
  return experiment_config_from_json(json_text, ExperimentConfig{});
}

ExperimentConfig experiment_config_from_json(std::string_view json_text, const ExperimentConfig& defaults) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  for (const auto& item : j.items()) {
    if (std::find(kConfigKeys.begin(), kConfigKeys.end(), item.key()) == kConfigKeys.end()) {
      throw InvalidArgument("unknown config key '" + item.key() + "'");
    }
  }
  ExperimentConfig c = defaults;
  try {
    if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
    maybe(j, "n", c.model.n);
    maybe(j, "F", c.model.forcing);
    maybe(j, "dt", c.integrator.dt);
    maybe(j, "steps_per_window", c.integrator.steps_per_window);
    maybe(j, "r", c.r);
    maybe(j, "n_x", c.n_x);
    maybe(j, "n_u", c.n_u);
    maybe(j, "alpha_x", c.alpha_x);
    maybe(j, "alpha_u", c.alpha_u);
    maybe(j, "enkf_alpha", c.enkf_alpha);
    maybe(j, "s", c.s);
    if (j.contains("mean_adjustment")) {
      const auto v = j.at("mean_adjustment").get<std::string>();
      if (v == "control-space-unbiased") {
        c.mean_adjustment = filters::MeanAdjustment::kControlSpaceUnbiased;
      } else if (v == "kalman-approximate") {
        c.mean_adjustment = filters::MeanAdjustment::kKalmanApproximate;
      } else {
        throw InvalidArgument("unknown mean_adjustment '" + v + "'");
      }
    }
    maybe(j, "obs_variance", c.obs_variance);
    maybe(j, "observed", c.observed);
    maybe(j, "initial_spread", c.initial_spread);
    maybe(j, "truth_burn_in", c.truth_burn_in);
    maybe(j, "n_steps", c.n_steps);
    maybe(j, "spinup", c.spinup);
    maybe(j, "realizations", c.realizations);
    maybe(j, "seed", c.seed);
    maybe(j, "climatological_std", c.climatological_std);
    maybe(j, "divergence_factor", c.divergence_factor);
    maybe(j, "pod_path", c.pod_path);
    maybe(j, "ae_path", c.ae_path);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("config has a value of the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["method"] = std::string(method_name(c.method));
  j["n"] = c.model.n;
  j["F"] = c.model.forcing;
  j["dt"] = c.integrator.dt;
  j["steps_per_window"] = c.integrator.steps_per_window;
  j["r"] = c.r;
  j["n_x"] = c.n_x;
  j["n_u"] = c.n_u;
  j["alpha_x"] = c.alpha_x;
  j["alpha_u"] = c.alpha_u;
  j["enkf_alpha"] = c.enkf_alpha;
  j["s"] = c.s;
  j["mean_adjustment"] = c.mean_adjustment == filters::MeanAdjustment::kControlSpaceUnbiased ? "control-space-unbiased"
                                                                                              : "kalman-approximate";
  j["obs_variance"] = c.obs_variance;
  j["observed"] = c.observed;
  j["initial_spread"] = c.initial_spread;
  j["truth_burn_in"] = c.truth_burn_in;
  j["n_steps"] = c.n_steps;
  j["spinup"] = c.spinup;
  j["realizations"] = c.realizations;
  j["seed"] = c.seed;
  j["climatological_std"] = c.climatological_std;
  j["divergence_factor"] = c.divergence_factor;
  j["pod_path"] = c.pod_path;
  j["ae_path"] = c.ae_path;
  return j.dump(2);
}

Artifacts load_artifacts(const ExperimentConfig& cfg) {
  Artifacts out;
  if (needs_pod(cfg.method)) {
    const std::filesystem::path path = cfg.resolved_pod_path();
    if (!std::filesystem::exists(path)) throw std::runtime_error("missing POD artifact: " + path.string());
    const auto coupling = rom::load_coupling(path);
    if (coupling.r() != cfg.r) throw InvalidArgument("POD artifact " + path.string() + " has the wrong r");
    out.pod = rom::build_quadratic_rom(coupling, cfg.model);
    out.hashes.push_back(path.string() + ":" + io::file_hash(path));
  }
  if (needs_ae(cfg.method)) {
    const std::filesystem::path path = cfg.resolved_ae_path();
    if (!std::filesystem::exists(path)) throw std::runtime_error("missing autoencoder artifact: " + path.string());
    out.autoencoder = ae::load_params(path);
    if (out.autoencoder->r() != cfg.r || out.autoencoder->n() != cfg.model.n) {
      throw InvalidArgument("autoencoder artifact " + path.string() + " has the wrong dimensions");
    }
    out.hashes.push_back(path.string() + ":" + io::file_hash(path));
  }
  return out;
}

double rmse(const Matrix& estimates, const Matrix& truth) {
  if (estimates.rows() != truth.rows() || estimates.cols() != truth.cols()) {
    throw InvalidArgument("rmse: estimates and truth differ in shape");
  }
  if (estimates.size() == 0) throw InvalidArgument("rmse: empty input");
  return std::sqrt((estimates - truth).squaredNorm() / static_cast<double>(estimates.size()));
}

double kinetic_energy_ratio(const Matrix& reconstructions, const Matrix& full) {
  if (reconstructions.rows() != full.rows() || reconstructions.cols() != full.cols()) {
    throw InvalidArgument("kinetic_energy_ratio: shapes differ");
  }
  const double denom = full.squaredNorm();
  if (denom == 0.0) throw InvalidArgument("kinetic_energy_ratio: full trajectory has zero energy");
  return reconstructions.squaredNorm() / denom;
}

Matrix truth_trajectory(const ExperimentConfig& cfg, int realization) {
  const auto f = dynamics::lorenz96_model(cfg.model).f;
  RandomStream rng(StreamKey{cfg.seed, static_cast<std::uint64_t>(realization), 0, StreamRole::kTruth});
  Matrix state = Vector::Constant(cfg.model.n, cfg.model.forcing) + 1e-3 * rng.standard_normal(cfg.model.n, 1);
  const std::size_t burn = dynamics::steps_for_duration(cfg.truth_burn_in, cfg.integrator.dt);
  for (std::size_t s = 0; s < burn; ++s) state = dynamics::rk4_step(f, state, cfg.integrator.dt, s);
  const auto traj = dynamics::integrate(f, state, cfg.integrator, static_cast<std::size_t>(cfg.n_steps));
  return traj.states;
}

Matrix synthesize_observations(const ExperimentConfig& cfg, const Matrix& truth, int realization) {
  const auto obs = cfg.observation_model();
  const Eigen::LLT<Matrix> llt(obs.R);
  Matrix y(obs.m(), cfg.n_steps);
  for (int i = 1; i <= cfg.n_steps; ++i) {
    RandomStream rng(StreamKey{cfg.seed, static_cast<std::uint64_t>(realization), static_cast<std::uint64_t>(i),
                               StreamRole::kObservationNoise});
    y.col(i - 1) = obs.H * truth.col(i) + llt.matrixL() * rng.standard_normal(obs.m(), 1);
  }
  return y;
}

namespace {

Matrix initial_members(const ExperimentConfig& cfg, const Vector& center, int realization, Eigen::Index count,
                       StreamRole role) {
  RandomStream rng(StreamKey{cfg.seed, static_cast<std::uint64_t>(realization), 0, role});
  Matrix members = cfg.initial_spread * rng.standard_normal(center.size(), count);
  members.colwise() += center;
  return members;
}

StreamKey perturbation_key(const ExperimentConfig& cfg, int realization, int step) {
  return StreamKey{cfg.seed, static_cast<std::uint64_t>(realization), static_cast<std::uint64_t>(step),
                   StreamRole::kPerturbPrincipal};
}

}  // namespace

RunResult run_twin_experiment(const ExperimentConfig& cfg, const Artifacts& artifacts, int realization) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const auto obs = cfg.observation_model();
  const auto l96 = dynamics::lorenz96_model(cfg.model);
  const Matrix truth = truth_trajectory(cfg, realization);
  const Matrix y = synthesize_observations(cfg, truth, realization);
  const double threshold = cfg.divergence_factor * cfg.climatological_std;

  RunResult result;
  result.realization = realization;
  result.step_errors.reserve(static_cast<std::size_t>(cfg.n_steps));

  Matrix x = initial_members(cfg, truth.col(0), realization, cfg.n_x, StreamRole::kInitialPrincipal);

  std::optional<filters::Coupling> coupling;
  dynamics::Tendency rom;
  filters::FilterConfig fcfg;
  fcfg.inflation = {cfg.alpha_x, cfg.alpha_u};
  fcfg.perturbed_obs = {cfg.s, cfg.seed};
  fcfg.mean_adjustment = cfg.mean_adjustment;
  filters::MultifidelityState state;

  if (cfg.method == Method::kMFEnKFPod) {
    if (!artifacts.pod) throw std::runtime_error("MFEnKF(POD) needs a POD surrogate");
    coupling = artifacts.pod->coupling;
    rom = rom::pod_rom_model(*artifacts.pod);
    fcfg.kind = filters::FilterKind::kMFEnKF;
  } else if (needs_ae(cfg.method)) {
    if (!artifacts.autoencoder) throw std::runtime_error("NN surrogate methods need autoencoder parameters");
    rom = ae::nn_rom_model(*artifacts.autoencoder, l96.f);
    if (cfg.method == Method::kNLMFEnKFNN) {
      coupling = filters::NonlinearCoupling{*artifacts.autoencoder};
      fcfg.kind = filters::FilterKind::kNLMFEnKF;
    } else {
      coupling = filters::IdentityInPrincipal{*artifacts.autoencoder};
      fcfg.kind = filters::FilterKind::kMFEnKF;
    }
  }
  if (coupling) {
    fcfg.validate(&*coupling);
    state.x = {x, ens::Space::kPrincipal};
    state.u_hat = {filters::project(*coupling, x), ens::Space::kControl};
    const Matrix anc = initial_members(cfg, truth.col(0), realization, cfg.n_u, StreamRole::kInitialAncillary);
    state.u = {filters::project(*coupling, anc), ens::Space::kControl};
  }

  double sq_sum = 0.0;
  try {
    for (int i = 1; i <= cfg.n_steps; ++i) {
      Vector estimate;
      if (coupling) {
        state = filters::mf_forecast(state, l96.f, rom, cfg.integrator);
        const auto y_pert = filters::draw_perturbed_observations(y.col(i - 1), obs, cfg.n_x, cfg.n_u, cfg.s,
                                                                 perturbation_key(cfg, realization, i));
        state = filters::mf_analysis(state, obs, *coupling, fcfg, y_pert);
        estimate = ens::ensemble_mean(state.x.members);
      } else {
        x = dynamics::advance(l96.f, x, cfg.integrator, 1);
        if (cfg.method == Method::kEnKF) {
          const auto y_pert = filters::draw_perturbed_observations(y.col(i - 1), obs, cfg.n_x, 0, cfg.s,
                                                                   perturbation_key(cfg, realization, i));
          x = filters::enkf_analysis(ens::inflate(x, cfg.enkf_alpha), y_pert.principal, obs);
        }
        estimate = ens::ensemble_mean(x);
      }
      const double err = std::sqrt((estimate - truth.col(i)).squaredNorm() / static_cast<double>(cfg.model.n));
      result.step_errors.push_back(err);
      if (!std::isfinite(err) || err > threshold) {
        result.diverged = true;
        result.diverged_step = i;
        break;
      }
      if (i > cfg.spinup) sq_sum += err * err;
    }
  } catch (const NumericalBlowup&) {
    result.diverged = true;
    result.diverged_step = static_cast<int>(result.step_errors.size()) + 1;
  } catch (const LinearSolveError&) {
    result.diverged = true;
    result.diverged_step = static_cast<int>(result.step_errors.size()) + 1;
  }

  result.rmse = result.diverged ? std::numeric_limits<double>::quiet_NaN()
                                : std::sqrt(sq_sum / static_cast<double>(cfg.n_steps - cfg.spinup));
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

std::vector<RunResult> run_realizations(const ExperimentConfig& cfg, const Artifacts& artifacts) {
  std::vector<RunResult> out;
  out.reserve(static_cast<std::size_t>(cfg.realizations));
  for (int k = 0; k < cfg.realizations; ++k) out.push_back(run_twin_experiment(cfg, artifacts, k));
  return out;
}

SweepRow summarize(const ExperimentConfig& cfg, const std::vector<RunResult>& runs) {
  SweepRow row;
  row.method = cfg.method;
  row.r = cfg.method == Method::kEnKF || cfg.method == Method::kFreeRun ? 0 : cfg.r;
  row.n_x = cfg.n_x;
  row.n_u = is_multifidelity(cfg.method) ? cfg.n_u : 0;
  row.alpha_x = cfg.method == Method::kEnKF ? cfg.enkf_alpha : cfg.alpha_x;
  row.alpha_u = is_multifidelity(cfg.method) ? cfg.alpha_u : 1.0;
  row.realizations = static_cast<int>(runs.size());
  std::vector<double> ok;
  for (const auto& r : runs) {
    if (!r.diverged) ok.push_back(r.rmse);
  }
  row.divergence_fraction =
      runs.empty() ? 0.0 : static_cast<double>(runs.size() - ok.size()) / static_cast<double>(runs.size());
  if (ok.empty()) {
    row.mean_rmse = std::numeric_limits<double>::quiet_NaN();
    row.two_sigma = 0.0;
    return row;
  }
  double mean = 0.0;
  for (const double v : ok) mean += v;
  mean /= static_cast<double>(ok.size());
  double var = 0.0;
  for (const double v : ok) var += (v - mean) * (v - mean);
  var = ok.size() > 1 ? var / static_cast<double>(ok.size() - 1) : 0.0;
  row.mean_rmse = mean;
  row.two_sigma = 2.0 * std::sqrt(var);
  return row;
}

SweepResult sweep_rom_dimension(const ExperimentConfig& base, const std::vector<int>& rs,
                                const SweepProgress& progress) {
  SweepResult out;
  out.axes = "r";
  ExperimentConfig enkf = base;
  enkf.method = Method::kEnKF;
  const SweepRow enkf_row = summarize(enkf, run_realizations(enkf, Artifacts{}));
  if (progress) progress(enkf_row);

  for (const int r : rs) {
    for (const Method m : {Method::kMFEnKFPod, Method::kNLMFEnKFNN, Method::kMFEnKFNN}) {
      ExperimentConfig cfg = base;
      cfg.method = m;
      cfg.r = r;
      cfg.n_u = r - 3;
      const auto artifacts = load_artifacts(cfg);
      out.rows.push_back(summarize(cfg, run_realizations(cfg, artifacts)));
      if (progress) progress(out.rows.back());
    }
    SweepRow row = enkf_row;
    row.r = r;
    out.rows.push_back(row);
  }
  return out;
}

SweepResult sweep_ensemble_inflation(const ExperimentConfig& base, const std::vector<int>& n_xs,
                                     const std::vector<double>& alphas, const SweepProgress& progress) {
  SweepResult out;
  out.axes = "n_x,alpha_x";
  for (const Method m : {Method::kMFEnKFPod, Method::kNLMFEnKFNN, Method::kMFEnKFNN, Method::kEnKF}) {
    ExperimentConfig method_cfg = base;
    method_cfg.method = m;
    const auto artifacts = load_artifacts(method_cfg);
    for (const int n_x : n_xs) {
      for (const double alpha : alphas) {
        ExperimentConfig cfg = method_cfg;
        cfg.n_x = n_x;
        cfg.alpha_x = alpha;
        cfg.enkf_alpha = alpha;
        SweepRow row = summarize(cfg, run_realizations(cfg, artifacts));
        if (m == Method::kEnKF) row.r = base.r;
        out.rows.push_back(row);
        if (progress) progress(out.rows.back());
      }
    }
  }
  return out;
}

std::string sweep_csv(const SweepResult& sweep) {
  std::ostringstream ss;
  ss << "method,r,n_x,n_u,alpha_x,alpha_u,realizations,mean_rmse,two_sigma,divergence_fraction\n";
  for (const auto& row : sweep.rows) {
    ss << method_name(row.method) << ',' << row.r << ',' << row.n_x << ',' << row.n_u << ','
       << format_double(row.alpha_x) << ',' << format_double(row.alpha_u) << ',' << row.realizations << ','
       << format_double(row.mean_rmse) << ',' << format_double(row.two_sigma) << ','
       << format_double(row.divergence_fraction) << '\n';
  }
  return ss.str();
}

std::string runs_csv(const ExperimentConfig& cfg, const std::vector<RunResult>& runs) {
  std::ostringstream ss;
  ss << "method,realization,rmse,diverged,diverged_step\n";
  for (const auto& r : runs) {
    ss << method_name(cfg.method) << ',' << r.realization << ',' << format_double(r.rmse) << ','
       << (r.diverged ? 1 : 0) << ',' << r.diverged_step << '\n';
  }
  return ss.str();
}

EnergyRow rom_energy(const Matrix& snapshots, const rom::LinearCoupling& pod, const ae::AutoencoderParams* autoencoder) {
  EnergyRow row;
  row.r = static_cast<int>(pod.r());
  row.pod = kinetic_energy_ratio(pod.interpolate(pod.project(snapshots)), snapshots);
  if (autoencoder != nullptr) {
    row.nn = kinetic_energy_ratio(ae::decode(ae::encode(snapshots, *autoencoder), *autoencoder), snapshots);
  }
  return row;
}

std::string energy_csv(const std::vector<EnergyRow>& rows) {
  std::ostringstream ss;
  ss << "r,pod_rom,nn_rom\n";
  for (const auto& row : rows) {
    ss << row.r << ',' << format_double(row.pod) << ',' << (row.nn ? format_double(*row.nn) : std::string("nan"))
       << '\n';
  }
  return ss.str();
}

}  // namespace mfda::harness
