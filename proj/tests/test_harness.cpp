#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "mfda/errors.hpp"
#include "mfda/harness.hpp"
#include "mfda/rng.hpp"

using namespace mfda;
using namespace mfda::harness;

namespace {

ExperimentConfig short_config(Method m) {
  ExperimentConfig c;
  c.method = m;
  c.n_steps = 120;
  c.spinup = 20;
  c.realizations = 2;
  return c;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("method names round-trip") {
  for (const auto m : {Method::kEnKF, Method::kMFEnKFPod, Method::kNLMFEnKFNN, Method::kMFEnKFNN, Method::kFreeRun}) {
    CHECK(parse_method(method_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_method("kalman"), InvalidArgument);
}

TEST_CASE("config json") {
  ExperimentConfig c;
  c.method = Method::kNLMFEnKFNN;
  c.r = 21;
  c.n_u = 18;
  c.observed = {0, 5, 9};
  c.mean_adjustment = filters::MeanAdjustment::kKalmanApproximate;
  const auto back = experiment_config_from_json(experiment_config_to_json(c));
  CHECK(back.method == c.method);
  CHECK(back.r == 21);
  CHECK(back.n_u == 18);
  CHECK(back.observed == c.observed);
  CHECK(back.mean_adjustment == c.mean_adjustment);
  CHECK(experiment_config_to_json(back) == experiment_config_to_json(c));

  CHECK(experiment_config_from_json(R"({"n_x": 48})").n_x == 48);
  CHECK_THROWS_AS(experiment_config_from_json(R"({"nx": 48})"), InvalidArgument);
  CHECK_THROWS_AS(experiment_config_from_json(R"({"n_x": "many"})"), InvalidArgument);
  CHECK_THROWS_AS(experiment_config_from_json(R"({"alpha_x": 0.9})"), InvalidArgument);
  CHECK_THROWS_AS(experiment_config_from_json("[1, 2"), InvalidArgument);
  CHECK(replace_r("a/pod_r{r}.csv", 14) == "a/pod_r14.csv");
}

TEST_CASE("rmse and kinetic energy") {
  RandomStream rng(101);
  const Matrix truth = rng.standard_normal(4, 6);
  CHECK(rmse(truth, truth) == 0.0);
  CHECK(rmse(truth.array() + 0.3, truth) == doctest::Approx(0.3));
  const Matrix est = rng.standard_normal(4, 6);
  double s = 0.0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 6; ++j) s += (est(i, j) - truth(i, j)) * (est(i, j) - truth(i, j));
  }
  CHECK(rmse(est, truth) == doctest::Approx(std::sqrt(s / 24)));
  CHECK_THROWS_AS(rmse(est, Matrix(truth.leftCols(5))), InvalidArgument);

  CHECK(kinetic_energy_ratio(truth, truth) == 1.0);
  CHECK(kinetic_energy_ratio(Matrix::Zero(4, 6), truth) == 0.0);
  CHECK_THROWS_AS(kinetic_energy_ratio(Matrix::Zero(4, 6), Matrix::Zero(4, 6)), InvalidArgument);
}

TEST_CASE("truth and observations are shared across methods") {
  const auto a = short_config(Method::kEnKF);
  auto b = short_config(Method::kFreeRun);
  b.n_x = 7;
  CHECK(truth_trajectory(a, 1) == truth_trajectory(b, 1));
  CHECK(truth_trajectory(a, 0) != truth_trajectory(a, 1));
  const Matrix t = truth_trajectory(a, 0);
  CHECK(t.cols() == a.n_steps + 1);
  const Matrix y = synthesize_observations(a, t, 0);
  CHECK(y.cols() == a.n_steps);
  const double noise = rmse(y, t.rightCols(a.n_steps));
  CHECK(noise > 0.8);
  CHECK(noise < 1.2);
}

TEST_CASE("EnKF tracks the truth and is reproducible") {
  const auto cfg = short_config(Method::kEnKF);
  const auto r1 = run_twin_experiment(cfg, {}, 0);
  const auto r2 = run_twin_experiment(cfg, {}, 0);
  CHECK(!r1.diverged);
  CHECK(r1.rmse < 0.5);
  CHECK(r1.rmse == r2.rmse);
  CHECK(r1.step_errors == r2.step_errors);
  CHECK(r1.step_errors.size() == 120);

  // 48 members span the 40-dim state, so near-exact observations pin it.
  auto exact = cfg;
  exact.n_x = 48;
  exact.obs_variance = 1e-12;
  const auto near = run_twin_experiment(exact, {}, 0);
  CHECK(near.step_errors.back() < 1e-3);

  const auto free = run_twin_experiment(short_config(Method::kFreeRun), {}, 0);
  CHECK(free.rmse > 3.0);
}

TEST_CASE("divergence is recorded, not thrown") {
  auto cfg = short_config(Method::kFreeRun);
  cfg.climatological_std = 0.01;
  const auto r = run_twin_experiment(cfg, {}, 0);
  CHECK(r.diverged);
  CHECK(std::isnan(r.rmse));
  CHECK(r.diverged_step >= 1);
  CHECK(static_cast<int>(r.step_errors.size()) == r.diverged_step);
}

TEST_CASE("multifidelity runs load artifacts from disk") {
  const auto traj = dynamics::generate_snapshots({}, {}, 300, 1.0, 102, 20.0);
  std::filesystem::create_directories("harness_artifacts");
  rom::save_coupling("harness_artifacts/pod_r10.csv", rom::build_pod(traj, 10), "x");
  ae::AEConfig aec;
  aec.r = 10;
  aec.h = 16;
  ae::save_params("harness_artifacts/ae_r10.bin", ae::glorot_init(aec, 103), {aec, {}, 0.0, 0});

  auto cfg = short_config(Method::kMFEnKFPod);
  cfg.r = 10;
  cfg.n_u = 7;
  cfg.pod_path = "harness_artifacts/pod_r{r}.csv";
  cfg.ae_path = "harness_artifacts/ae_r{r}.bin";
  const auto art = load_artifacts(cfg);
  CHECK(art.pod.has_value());
  CHECK(!art.autoencoder.has_value());
  CHECK(art.hashes.size() == 1);
  const auto runs = run_realizations(cfg, art);
  CHECK(runs.size() == 2);
  CHECK(!runs[0].diverged);
  CHECK(runs[0].rmse < 1.5);

  // An untrained autoencoder: whatever happens must be reported, not thrown.
  for (const auto m : {Method::kNLMFEnKFNN, Method::kMFEnKFNN}) {
    auto nn = cfg;
    nn.method = m;
    const auto a = load_artifacts(nn);
    CHECK(a.autoencoder.has_value());
    const auto r = run_twin_experiment(nn, a, 0);
    CHECK((r.diverged || std::isfinite(r.rmse)));
  }

  auto missing = cfg;
  missing.r = 11;
  CHECK_THROWS_AS(load_artifacts(missing), std::runtime_error);
  CHECK_THROWS(run_twin_experiment(cfg, {}, 0));

  const auto energy = rom_energy(traj.states, rom::load_coupling("harness_artifacts/pod_r10.csv"));
  CHECK(energy.pod == doctest::Approx(rom::build_pod(traj, 10).captured_energy()).epsilon(1e-10));
  CHECK(!energy.nn.has_value());
  std::filesystem::remove_all("harness_artifacts");
}

TEST_CASE("summaries and CSV") {
  auto cfg = short_config(Method::kEnKF);
  std::vector<RunResult> runs(4);
  for (int i = 0; i < 4; ++i) runs[static_cast<std::size_t>(i)].realization = i;
  runs[0].rmse = 1.0;
  runs[1].rmse = 3.0;
  runs[2].diverged = true;
  runs[2].rmse = std::nan("");
  runs[3].rmse = 2.0;
  const auto row = summarize(cfg, runs);
  CHECK(row.mean_rmse == doctest::Approx(2.0));
  CHECK(row.two_sigma == doctest::Approx(2.0));
  CHECK(row.divergence_fraction == doctest::Approx(0.25));
  CHECK(row.alpha_x == cfg.enkf_alpha);

  SweepResult sweep;
  sweep.rows = {row};
  const auto csv = sweep_csv(sweep);
  CHECK(csv.rfind("method,r,n_x,n_u,alpha_x,alpha_u,realizations,mean_rmse,two_sigma,divergence_fraction\n", 0) == 0);
  CHECK(csv.find("enkf,0,32,0,1.07") != std::string::npos);
  CHECK(runs_csv(cfg, runs).find("enkf,2,nan,1,-1") != std::string::npos);

  const auto energy = energy_csv({{7, 0.5, std::nullopt}, {14, 0.7, 0.75}});
  CHECK(energy == "r,pod_rom,nn_rom\n7,0.5,nan\n14,0.7,0.75\n");
}

}  // TEST_SUITE
