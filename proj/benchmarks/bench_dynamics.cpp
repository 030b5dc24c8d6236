#include <benchmark/benchmark.h>

#include "mfda/dynamics.hpp"
#include "mfda/rng.hpp"
#include "mfda/rom_pod.hpp"

using namespace mfda;

static void BM_Lorenz96Rk4(benchmark::State& state) {
  const dynamics::Lorenz96Params p;
  const auto f = dynamics::lorenz96_model(p).f;
  RandomStream rng(1, StreamRole::kTest);
  Matrix y = Matrix::Constant(p.n, state.range(0), p.forcing) + rng.standard_normal(p.n, state.range(0));
  for (auto _ : state) {
    y = dynamics::rk4_step(f, y, 0.05);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Lorenz96Rk4)->Arg(1)->Arg(32)->Arg(64);

static void BM_PodRomTendency(benchmark::State& state) {
  const dynamics::Lorenz96Params p;
  const auto traj = dynamics::generate_snapshots(p, {}, 400, 3.6, 2, 20.0);
  const auto rom = rom::build_quadratic_rom(rom::build_pod(traj, state.range(0)), p);
  RandomStream rng(3, StreamRole::kTest);
  const Matrix u = rng.standard_normal(state.range(0), 32);
  for (auto _ : state) benchmark::DoNotOptimize(rom::pod_rom_tendency(u, rom).data());
}
BENCHMARK(BM_PodRomTendency)->Arg(7)->Arg(28)->Arg(35);
BENCHMARK_MAIN();
