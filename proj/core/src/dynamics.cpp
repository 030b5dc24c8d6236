#include "mfda/dynamics.hpp"

#include <cmath>
#include <string>

#include "json.hpp"
#include "mfda/errors.hpp"
#include "mfda/io.hpp"
#include "mfda/rng.hpp"

namespace mfda::dynamics {

void Lorenz96Params::validate() const {
  if (n < 4) throw InvalidArgument("Lorenz96Params: n must be at least 4");
  if (!std::isfinite(forcing)) throw InvalidArgument("Lorenz96Params: forcing must be finite");
}

void IntegratorConfig::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("IntegratorConfig: dt must be positive");
  if (steps_per_window < 1) throw InvalidArgument("IntegratorConfig: steps_per_window must be >= 1");
}

void Trajectory::validate() const {
  if (static_cast<Eigen::Index>(times.size()) != states.cols()) {
    throw InvalidArgument("Trajectory: times and states differ in length");
  }
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) throw InvalidArgument("Trajectory: times not strictly increasing");
  }
}

namespace {

void check_dim(const Matrix& y, const Lorenz96Params& p, const char* who) {
  if (y.rows() != p.n) {
    throw InvalidArgument(std::string(who) + ": state dimension " + std::to_string(y.rows()) +
                          " does not match n = " + std::to_string(p.n));
  }
}

inline Eigen::Index wrap(Eigen::Index k, Eigen::Index n) { return ((k % n) + n) % n; }

}  // namespace

Matrix lorenz96_tendency(const Matrix& y, const Lorenz96Params& p) {
  check_dim(y, p, "lorenz96_tendency");
  const Eigen::Index n = p.n;
  Matrix out(n, y.cols());
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    const auto col = y.col(j);
    for (Eigen::Index k = 0; k < n; ++k) {
      const double ym1 = col(wrap(k - 1, n));
      const double ym2 = col(wrap(k - 2, n));
      const double yp1 = col(wrap(k + 1, n));
      out(k, j) = ym1 * (yp1 - ym2) - col(k) + p.forcing;
    }
  }
  return out;
}

Matrix lorenz96_vjp(const Matrix& y, const Matrix& w, const Lorenz96Params& p) {
  check_dim(y, p, "lorenz96_vjp");
  if (w.rows() != y.rows() || w.cols() != y.cols()) throw InvalidArgument("lorenz96_vjp: shape mismatch");
  const Eigen::Index n = p.n;
  Matrix out(n, y.cols());
  // df_k/dy_{k+1} = y_{k-1}, df_k/dy_{k-2} = -y_{k-1},
  // df_k/dy_{k-1} = y_{k+1} - y_{k-2}, df_k/dy_k = -1
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    const auto yc = y.col(c);
    const auto wc = w.col(c);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double from_km1 = wc(wrap(j - 1, n)) * yc(wrap(j - 2, n));
      const double from_kp2 = -wc(wrap(j + 2, n)) * yc(wrap(j + 1, n));
      const double from_kp1 = wc(wrap(j + 1, n)) * (yc(wrap(j + 2, n)) - yc(wrap(j - 1, n)));
      out(j, c) = from_km1 + from_kp2 + from_kp1 - wc(j);
    }
  }
  return out;
}

Matrix lorenz96_jvp(const Matrix& y, const Matrix& v, const Lorenz96Params& p) {
  check_dim(y, p, "lorenz96_jvp");
  if (v.rows() != y.rows() || v.cols() != y.cols()) throw InvalidArgument("lorenz96_jvp: shape mismatch");
  const Eigen::Index n = p.n;
  Matrix out(n, y.cols());
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    const auto yc = y.col(c);
    const auto vc = v.col(c);
    for (Eigen::Index k = 0; k < n; ++k) {
      const Eigen::Index km1 = wrap(k - 1, n), km2 = wrap(k - 2, n), kp1 = wrap(k + 1, n);
      out(k, c) = vc(km1) * (yc(kp1) - yc(km2)) + yc(km1) * (vc(kp1) - vc(km2)) - vc(k);
    }
  }
  return out;
}

DifferentiableTendency lorenz96_model(const Lorenz96Params& p) {
  p.validate();
  return DifferentiableTendency{
      [p](const Matrix& y) { return lorenz96_tendency(y, p); },
      [p](const Matrix& y, const Matrix& w) { return lorenz96_vjp(y, w, p); },
  };
}

Matrix rk4_step(const Tendency& f, const Matrix& y, double dt, std::size_t step_index) {
  if (!(dt > 0.0)) throw InvalidArgument("rk4_step: dt must be positive");
  const Matrix k1 = f(y);
  const Matrix k2 = f(y + (0.5 * dt) * k1);
  const Matrix k3 = f(y + (0.5 * dt) * k2);
  const Matrix k4 = f(y + dt * k3);
  Matrix out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (const auto bad = first_nonfinite_column(out); bad >= 0) {
    throw NumericalBlowup("rk4_step: non-finite state at step " + std::to_string(step_index), step_index,
                          bad);
  }
  return out;
}

Matrix advance(const Tendency& f, const Matrix& y, const IntegratorConfig& cfg, std::size_t n_windows,
               std::size_t first_step) {
  cfg.validate();
  Matrix state = y;
  std::size_t step = first_step;
  for (std::size_t w = 0; w < n_windows; ++w) {
    for (int s = 0; s < cfg.steps_per_window; ++s) state = rk4_step(f, state, cfg.dt, step++);
  }
  return state;
}

Trajectory integrate(const Tendency& f, const Vector& y0, const IntegratorConfig& cfg, std::size_t n_windows,
                     double t0) {
  cfg.validate();
  Trajectory traj;
  traj.times.resize(n_windows + 1);
  traj.states.resize(y0.size(), static_cast<Eigen::Index>(n_windows + 1));
  traj.times[0] = t0;
  traj.states.col(0) = y0;
  Matrix state = y0;
  std::size_t step = 0;
  for (std::size_t w = 1; w <= n_windows; ++w) {
    for (int s = 0; s < cfg.steps_per_window; ++s) state = rk4_step(f, state, cfg.dt, step++);
    traj.times[w] = t0 + static_cast<double>(w) * cfg.window();
    traj.states.col(static_cast<Eigen::Index>(w)) = state;
  }
  return traj;
}

std::size_t steps_for_duration(double duration, double dt) {
  if (!(duration >= 0.0)) throw InvalidArgument("duration must be non-negative");
  const double ratio = duration / dt;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio)) {
    throw InvalidArgument("duration " + std::to_string(duration) + " is not a multiple of dt " +
                          std::to_string(dt));
  }
  return static_cast<std::size_t>(rounded);
}

Vector spinup_initial_condition(const Lorenz96Params& p, std::uint64_t seed) {
  p.validate();
  RandomStream rng(StreamKey{seed, 0, 0, StreamRole::kSnapshots});
  Vector y = Vector::Constant(p.n, p.forcing);
  const auto k = static_cast<Eigen::Index>(rng.engine()() % static_cast<std::uint64_t>(p.n));
  y(k) += 1e-3 * rng.standard_normal();
  return y;
}

Trajectory generate_snapshots(const Lorenz96Params& p, const IntegratorConfig& cfg, std::size_t count,
                              double spacing, std::uint64_t seed, double burn_in) {
  p.validate();
  cfg.validate();
  if (!(spacing > 0.0)) throw InvalidArgument("generate_snapshots: spacing must be positive");
  const std::size_t spacing_steps = steps_for_duration(spacing, cfg.dt);
  const std::size_t burn_steps = steps_for_duration(burn_in, cfg.dt);
  if (spacing_steps == 0) throw InvalidArgument("generate_snapshots: spacing shorter than dt");

  const Tendency f = [&p](const Matrix& y) { return lorenz96_tendency(y, p); };
  Matrix state = spinup_initial_condition(p, seed);
  std::size_t step = 0;
  for (std::size_t s = 0; s < burn_steps; ++s) state = rk4_step(f, state, cfg.dt, step++);

  Trajectory traj;
  traj.times.resize(count);
  traj.states.resize(p.n, static_cast<Eigen::Index>(count));
  for (std::size_t i = 0; i < count; ++i) {
    if (i > 0) {
      for (std::size_t s = 0; s < spacing_steps; ++s) state = rk4_step(f, state, cfg.dt, step++);
    }
    traj.times[i] = burn_in + static_cast<double>(i) * spacing;
    traj.states.col(static_cast<Eigen::Index>(i)) = state;
  }
  return traj;
}

void save_snapshots(const std::filesystem::path& path, const Trajectory& snapshots, const SnapshotMeta& meta) {
  snapshots.validate();
  io::write_matrix(path, snapshots.states.transpose());
  const nlohmann::json side = {{"n", meta.n},         {"F", meta.forcing},   {"dt", meta.dt},
                               {"spacing", meta.spacing}, {"seed", meta.seed}, {"count", meta.count},
                               {"burn_in", meta.burn_in}};
  io::write_text(io::sidecar_path(path), side.dump(2) + "\n");
}

Trajectory load_snapshots(const std::filesystem::path& path, SnapshotMeta* meta) {
  const auto side = nlohmann::json::parse(io::read_text(io::sidecar_path(path)));
  SnapshotMeta m;
  m.n = side.at("n");
  m.forcing = side.at("F");
  m.dt = side.at("dt");
  m.spacing = side.at("spacing");
  m.seed = side.at("seed");
  m.count = side.at("count");
  m.burn_in = side.value("burn_in", 0.0);
  Trajectory traj;
  traj.states = io::read_matrix(path).transpose();
  if (traj.states.rows() != m.n || static_cast<std::size_t>(traj.states.cols()) != m.count) {
    throw InvalidArgument("load_snapshots: " + path.string() + " does not match its sidecar");
  }
  traj.times.resize(m.count);
  for (std::size_t i = 0; i < m.count; ++i) traj.times[i] = m.burn_in + static_cast<double>(i) * m.spacing;
  if (meta != nullptr) *meta = m;
  return traj;
}

}  // namespace mfda::dynamics
