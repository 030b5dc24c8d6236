#include <benchmark/benchmark.h>

#include "mfda/filters.hpp"
#include "mfda/rng.hpp"

using namespace mfda;

static void BM_EnKFAnalysis(benchmark::State& state) {
  const Eigen::Index n = 40;
  const auto obs = filters::ObservationModel::identity(n);
  RandomStream rng(7, StreamRole::kTest);
  const Matrix xb = rng.standard_normal(n, state.range(0));
  const Matrix y = rng.standard_normal(n, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(filters::enkf_analysis(xb, y, obs).data());
}
BENCHMARK(BM_EnKFAnalysis)->Arg(16)->Arg(32)->Arg(48);

static void BM_MFEnKFAnalysisPod(benchmark::State& state) {
  const Eigen::Index n = 40;
  const Eigen::Index r = state.range(0);
  RandomStream rng(8, StreamRole::kTest);
  const Matrix basis = rng.standard_normal(n, n);
  const Eigen::HouseholderQR<Matrix> qr(basis);
  rom::LinearCoupling c;
  c.phi = qr.householderQ() * Matrix::Identity(n, r);
  c.theta = c.phi.transpose();
  c.singular_values = Vector::Ones(r);
  const filters::Coupling coupling = c;
  const auto obs = filters::ObservationModel::identity(n);
  filters::MultifidelityState st;
  st.x = {rng.standard_normal(n, 32), ens::Space::kPrincipal};
  st.u_hat = {c.theta * st.x.members, ens::Space::kControl};
  st.u = {rng.standard_normal(r, r - 3), ens::Space::kControl};
  filters::FilterConfig cfg;
  cfg.kind = filters::FilterKind::kMFEnKF;
  const auto y = filters::draw_perturbed_observations(Vector::Zero(n), obs, 32, r - 3, 1.0, {1, 0, 0, StreamRole::kTest});
  for (auto _ : state) benchmark::DoNotOptimize(filters::mf_analysis(st, obs, coupling, cfg, y).x.members.data());
}
BENCHMARK(BM_MFEnKFAnalysisPod)->Arg(7)->Arg(28);
