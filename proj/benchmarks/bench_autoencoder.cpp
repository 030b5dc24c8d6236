#include <benchmark/benchmark.h>

#include "mfda/autoencoder.hpp"
#include "mfda/dynamics.hpp"
#include "mfda/rng.hpp"

using namespace mfda;

namespace {

struct Fixture {
  ae::AEConfig cfg;
  dynamics::DifferentiableTendency fom = dynamics::lorenz96_model({});
  ae::AutoencoderParams params;
  Matrix x;
  std::vector<Matrix> targets;

  explicit Fixture(Eigen::Index batch) {
    params = ae::glorot_init(cfg, 4);
    x = dynamics::generate_snapshots({}, {}, static_cast<std::size_t>(batch), 1.0, 5, 20.0).states;
    targets = ae::trajectory_targets(x, cfg, fom.f);
  }
};

}  // namespace

static void BM_LossGradient(benchmark::State& state) {
  Fixture fx(state.range(0));
  for (auto _ : state) {
    auto g = ae::loss_gradient(fx.x, fx.targets, fx.params, fx.cfg, fx.fom);
    benchmark::DoNotOptimize(g.loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossGradient)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_SnapshotLoss(benchmark::State& state) {
  Fixture fx(state.range(0));
  for (auto _ : state) {
    auto l = ae::snapshot_loss(fx.x, fx.targets, fx.params, fx.cfg, fx.fom.f);
    benchmark::DoNotOptimize(l.reconstruction);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SnapshotLoss)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_NnRomTendency(benchmark::State& state) {
  Fixture fx(state.range(0));
  const Matrix u = ae::encode(fx.x, fx.params);
  for (auto _ : state) benchmark::DoNotOptimize(ae::nn_rom_tendency(u, fx.params, fx.fom.f).data());
}
BENCHMARK(BM_NnRomTendency)->Arg(25)->Arg(32);
