#pragma once

#include <filesystem>
#include <string>

#include "mfda/dynamics.hpp"
#include "mfda/linalg.hpp"

namespace mfda::rom {

/// Linear projection Theta (r x n) and interpolation Phi (n x r) with
/// Theta = Phi^T and orthonormal Phi columns.
struct LinearCoupling {
  Matrix theta;
  Matrix phi;
  Vector singular_values;  ///< all singular values of the snapshot matrix

  Eigen::Index r() const noexcept { return phi.cols(); }
  Eigen::Index n() const noexcept { return phi.rows(); }

  Matrix project(const Matrix& x) const { return theta * x; }
  Matrix interpolate(const Matrix& u) const { return phi * u; }

  /// Fraction of snapshot energy captured by the leading r modes.
  double captured_energy() const;
};

/// Proper orthogonal decomposition of the raw (uncentered) snapshots by a
/// thin SVD. Columns of Phi are ordered by decreasing singular value and
/// signed so that each column's largest-magnitude entry is positive.
LinearCoupling build_pod(const dynamics::Trajectory& snapshots, Eigen::Index r);
LinearCoupling build_pod(const Matrix& snapshots, Eigen::Index r);

/// Restricts a coupling to its leading r modes.
LinearCoupling truncate(const LinearCoupling& full, Eigen::Index r);

/// du/dt = a + B u + u^T C u, the Galerkin projection of Lorenz '96.
struct QuadraticROM {
  Vector a;
  Matrix b;
  /// r x (r*r); column q + r*s holds C(:, q, s), where q indexes the shifted
  /// factor y_{k-1} and s the differenced factor y_{k+1} - y_{k-2}.
  Matrix c;
  LinearCoupling coupling;

  Eigen::Index r() const noexcept { return a.size(); }
  double c_entry(Eigen::Index p, Eigen::Index q, Eigen::Index s) const { return c(p, q + r() * s); }
};

QuadraticROM build_quadratic_rom(const LinearCoupling& coupling, const dynamics::Lorenz96Params& p);

/// a + B u + u^T C u applied to every column of `u`.
Matrix pod_rom_tendency(const Matrix& u, const QuadraticROM& rom);

dynamics::Tendency pod_rom_model(const QuadraticROM& rom);

/// Writes Phi (n x r) to `path` and a sidecar with
/// {r, n, singular_values, snapshot_file_hash}.
void save_coupling(const std::filesystem::path& path, const LinearCoupling& coupling,
                   const std::string& snapshot_file_hash);
LinearCoupling load_coupling(const std::filesystem::path& path);

}  // namespace mfda::rom
