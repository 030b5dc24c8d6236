#include <filesystem>

#include "doctest.h"
#include "mfda/dynamics.hpp"
#include "mfda/errors.hpp"
#include "mfda/rng.hpp"
#include "mfda/rom_pod.hpp"

using namespace mfda;
using namespace mfda::rom;

namespace {

const dynamics::Trajectory& snapshots() {
  static const auto traj = dynamics::generate_snapshots({}, {}, 300, 1.0, 21, 20.0);
  return traj;
}

}  // namespace

TEST_SUITE("rom_pod") {

TEST_CASE("left inverse and ordering") {
  for (const int r : {7, 14, 21, 28, 35, 40}) {
    const auto c = build_pod(snapshots(), r);
    CHECK(c.r() == r);
    CHECK((c.theta * c.phi - Matrix::Identity(r, r)).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(c.theta == c.phi.transpose());
    for (Eigen::Index i = 1; i < c.singular_values.size(); ++i) {
      CHECK(c.singular_values(i) <= c.singular_values(i - 1));
    }
  }
  const auto full = build_pod(snapshots(), 40);
  CHECK((full.phi * full.theta - Matrix::Identity(40, 40)).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("column signs follow the largest-magnitude entry") {
  const auto c = build_pod(snapshots(), 10);
  for (Eigen::Index j = 0; j < c.r(); ++j) {
    Eigen::Index k = 0;
    c.phi.col(j).cwiseAbs().maxCoeff(&k);
    CHECK(c.phi(k, j) > 0.0);
  }
}

TEST_CASE("exact recovery of a low-dimensional subspace") {
  RandomStream rng(31);
  const Matrix basis = rng.standard_normal(12, 3);
  const Matrix x = basis * rng.standard_normal(3, 50);
  const auto c = build_pod(x, 3);
  CHECK((c.phi * (c.theta * x) - x).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_THROWS_AS(build_pod(x, 4), InvalidArgument);
  CHECK_THROWS_AS(build_pod(x, 13), InvalidArgument);
  CHECK_THROWS_AS(build_pod(Matrix(x.leftCols(1)), 1), InvalidArgument);
}

TEST_CASE("captured energy matches the Gram-matrix eigenvalues") {
  const Matrix& x = snapshots().states;
  const Eigen::SelfAdjointEigenSolver<Matrix> gram(x.transpose() * x);
  Vector lambda = gram.eigenvalues().reverse();
  const double total = lambda.sum();
  for (const int r : {5, 20, 33}) {
    const auto c = build_pod(snapshots(), r);
    const double oracle = lambda.head(r).sum() / total;
    CHECK(c.captured_energy() == doctest::Approx(oracle).epsilon(1e-10));
    const Matrix rec = c.phi * (c.theta * x);
    CHECK(rec.squaredNorm() / x.squaredNorm() == doctest::Approx(oracle).epsilon(1e-10));
  }
}

TEST_CASE("truncation equals a direct build") {
  const auto full = build_pod(snapshots(), 35);
  const auto direct = build_pod(snapshots(), 14);
  const auto cut = truncate(full, 14);
  CHECK((cut.phi - direct.phi).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(truncate(full, 36), InvalidArgument);
}

TEST_CASE("quadratic ROM coefficients") {
  const dynamics::Lorenz96Params p;
  const auto c = build_pod(snapshots(), 12);
  const auto rom = build_quadratic_rom(c, p);
  CHECK((rom.a - p.forcing * c.theta * Vector::Ones(40)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((rom.b + Matrix::Identity(12, 12)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((pod_rom_tendency(Vector::Zero(12), rom) - rom.a).cwiseAbs().maxCoeff() == 0.0);

  // Scalar-loop tensor entry: sum_k theta_pk phi_{k-1,q} (phi_{k+1,s} - phi_{k-2,s}).
  const int n = 40;
  for (const auto& [pp, q, s] : {std::tuple{0, 0, 0}, {3, 7, 1}, {11, 2, 9}}) {
    double entry = 0.0;
    for (int k = 0; k < n; ++k) {
      entry += c.theta(pp, k) * c.phi((k - 1 + n) % n, q) * (c.phi((k + 1) % n, s) - c.phi((k - 2 + n) % n, s));
    }
    CHECK(rom.c_entry(pp, q, s) == doctest::Approx(entry).epsilon(1e-12));
  }
}

TEST_CASE("ROM tendency equals the projected full tendency") {
  const dynamics::Lorenz96Params p;
  RandomStream rng(32);
  for (const int r : {7, 14, 21, 28, 35}) {
    const auto rom = build_quadratic_rom(build_pod(snapshots(), r), p);
    const Matrix u = 5.0 * rng.standard_normal(r, 100);
    const Matrix direct = rom.coupling.theta * dynamics::lorenz96_tendency(rom.coupling.phi * u, p);
    CHECK((pod_rom_tendency(u, rom) - direct).cwiseAbs().maxCoeff() <= 1e-8);
  }
  const auto rom = build_quadratic_rom(build_pod(snapshots(), 28), p);
  const Vector ueq = rom.coupling.theta * Vector::Constant(40, 8.0);
  const Vector direct = rom.coupling.theta * dynamics::lorenz96_tendency(rom.coupling.phi * ueq, p);
  CHECK((pod_rom_tendency(ueq, rom) - direct).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK_THROWS_AS(pod_rom_tendency(Vector::Zero(27), rom), InvalidArgument);
}

TEST_CASE("coupling files round-trip") {
  const auto c = build_pod(snapshots(), 9);
  save_coupling("pod_roundtrip.csv", c, "abc123");
  const auto back = load_coupling("pod_roundtrip.csv");
  CHECK(back.phi == c.phi);
  CHECK(back.theta == c.theta);
  CHECK(back.singular_values == c.singular_values);
  std::filesystem::remove("pod_roundtrip.csv");
  std::filesystem::remove("pod_roundtrip.json");
}

}  // TEST_SUITE
