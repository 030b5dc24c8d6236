#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "mfda/linalg.hpp"

namespace mfda::dynamics {

struct Lorenz96Params {
  int n = 40;
  double forcing = 8.0;

  void validate() const;
};

/// RK4 sub-stepping of one assimilation window.
struct IntegratorConfig {
  double dt = 0.05;
  int steps_per_window = 1;

  double window() const noexcept { return dt * steps_per_window; }
  void validate() const;
};

/// States sampled at increasing times; column i of `states` is the state at
/// `times[i]`.
struct Trajectory {
  std::vector<double> times;
  Matrix states;

  std::size_t size() const noexcept { return times.size(); }
  Eigen::Index dim() const noexcept { return states.rows(); }
  void validate() const;
};

/// Right-hand side evaluated column-wise on a batch of states.
using Tendency = std::function<Matrix(const Matrix&)>;

/// A tendency together with its vector-Jacobian product,
/// vjp(y, w) = J_f(y)^T w, column-wise.
struct DifferentiableTendency {
  Tendency f;
  std::function<Matrix(const Matrix&, const Matrix&)> vjp;
};

/// Lorenz '96 right-hand side, applied to every column of `y`.
///
/// With the shift (I y)_k = y_{k-1} and the one-sided difference
/// (D y)_k = y_{k-2} - y_{k+1}, the advection term is
/// [y y_x]_k = y_{k-1} (y_{k-2} - y_{k+1}), and f = -y y_x - y + F gives
///   f_k = y_{k-1} (y_{k+1} - y_{k-2}) - y_k + F
/// with cyclic indices.
Matrix lorenz96_tendency(const Matrix& y, const Lorenz96Params& p);

/// J_f(y)^T w for the Lorenz '96 tendency, column-wise.
Matrix lorenz96_vjp(const Matrix& y, const Matrix& w, const Lorenz96Params& p);

/// J_f(y) v, column-wise.
Matrix lorenz96_jvp(const Matrix& y, const Matrix& v, const Lorenz96Params& p);

DifferentiableTendency lorenz96_model(const Lorenz96Params& p);

/// One classical fourth-order Runge-Kutta step. Throws NumericalBlowup
/// (tagged with `step_index` and the offending column) when the result is
/// not finite.
Matrix rk4_step(const Tendency& f, const Matrix& y, double dt, std::size_t step_index = 0);

/// Advances `y` by `n_windows` windows without recording intermediate states.
Matrix advance(const Tendency& f, const Matrix& y, const IntegratorConfig& cfg,
               std::size_t n_windows, std::size_t first_step = 0);

/// Single-state trajectory sampled at window boundaries: n_windows + 1 states.
Trajectory integrate(const Tendency& f, const Vector& y0, const IntegratorConfig& cfg,
                     std::size_t n_windows, double t0 = 0.0);

/// F * 1 with a seeded 1e-3-scale perturbation on one seeded component.
Vector spinup_initial_condition(const Lorenz96Params& p, std::uint64_t seed);

/// `count` states on the attractor, `spacing` time units apart, the first
/// one taken after `burn_in` time units from spinup_initial_condition(seed).
Trajectory generate_snapshots(const Lorenz96Params& p, const IntegratorConfig& cfg,
                              std::size_t count, double spacing, std::uint64_t seed,
                              double burn_in = 100.0);

/// Number of inner steps covering `duration`; throws unless `duration` is a
/// non-negative multiple of dt.
std::size_t steps_for_duration(double duration, double dt);

/// Provenance recorded in the JSON sidecar of a snapshot file.
struct SnapshotMeta {
  int n = 40;
  double forcing = 8.0;
  double dt = 0.05;
  double spacing = 36.0;
  std::uint64_t seed = 0;
  std::size_t count = 0;
  double burn_in = 100.0;
};

/// Rows = snapshots, columns = state entries (CSV or ".bin"), plus sidecar.
void save_snapshots(const std::filesystem::path& path, const Trajectory& snapshots, const SnapshotMeta& meta);
Trajectory load_snapshots(const std::filesystem::path& path, SnapshotMeta* meta = nullptr);

}  // namespace mfda::dynamics
