#include "mfda/rom_pod.hpp"

#include <string>

#include "json.hpp"
#include "mfda/errors.hpp"
#include "mfda/io.hpp"

namespace mfda::rom {

double LinearCoupling::captured_energy() const {
  const double total = singular_values.squaredNorm();
  if (total <= 0.0) return 0.0;
  return singular_values.head(r()).squaredNorm() / total;
}

LinearCoupling build_pod(const dynamics::Trajectory& snapshots, Eigen::Index r) {
  snapshots.validate();
  return build_pod(snapshots.states, r);
}

LinearCoupling build_pod(const Matrix& snapshots, Eigen::Index r) {
  const Eigen::Index n = snapshots.rows();
  const Eigen::Index t = snapshots.cols();
  if (t < 2) throw InvalidArgument("build_pod: need at least two snapshots");
  if (r < 1 || r > std::min(n, t)) {
    throw InvalidArgument("build_pod: r = " + std::to_string(r) + " outside [1, min(n, T)]");
  }
  Eigen::BDCSVD<Matrix> svd(snapshots, Eigen::ComputeThinU);
  const Vector& sigma = svd.singularValues();
  const double tol = sigma(0) * static_cast<double>(std::max(n, t)) * Eigen::NumTraits<double>::epsilon();
  Eigen::Index rank = 0;
  while (rank < sigma.size() && sigma(rank) > tol) ++rank;
  if (r > rank) {
    throw InvalidArgument("build_pod: r = " + std::to_string(r) + " exceeds snapshot rank " + std::to_string(rank));
  }

  LinearCoupling out;
  out.phi = svd.matrixU().leftCols(r);
  for (Eigen::Index j = 0; j < r; ++j) {
    Eigen::Index arg = 0;
    out.phi.col(j).cwiseAbs().maxCoeff(&arg);
    if (out.phi(arg, j) < 0.0) out.phi.col(j) *= -1.0;
  }
  out.theta = out.phi.transpose();
  out.singular_values = sigma;
  return out;
}

LinearCoupling truncate(const LinearCoupling& full, Eigen::Index r) {
  if (r < 1 || r > full.r()) throw InvalidArgument("truncate: r out of range");
  LinearCoupling out;
  out.phi = full.phi.leftCols(r);
  out.theta = out.phi.transpose();
  out.singular_values = full.singular_values;
  return out;
}

QuadraticROM build_quadratic_rom(const LinearCoupling& coupling, const dynamics::Lorenz96Params& p) {
  p.validate();
  if (coupling.n() != p.n || coupling.theta.rows() != coupling.r() || coupling.theta.cols() != p.n) {
    throw InvalidArgument("build_quadratic_rom: coupling inconsistent with n");
  }
  const Eigen::Index n = p.n;
  const Eigen::Index r = coupling.r();
  const Matrix& phi = coupling.phi;

  // shifted(k, q) = Phi(k-1, q); diffed(k, s) = Phi(k+1, s) - Phi(k-2, s)
  Matrix shifted(n, r), diffed(n, r);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index km1 = (k + n - 1) % n, km2 = (k + n - 2) % n, kp1 = (k + 1) % n;
    shifted.row(k) = phi.row(km1);
    diffed.row(k) = phi.row(kp1) - phi.row(km2);
  }

  QuadraticROM rom;
  rom.a = p.forcing * coupling.theta * Vector::Ones(n);
  rom.b = -coupling.theta * phi;
  rom.c.resize(r, r * r);
  for (Eigen::Index s = 0; s < r; ++s) {
    for (Eigen::Index q = 0; q < r; ++q) {
      rom.c.col(q + r * s) = coupling.theta * shifted.col(q).cwiseProduct(diffed.col(s));
    }
  }
  rom.coupling = coupling;
  return rom;
}

Matrix pod_rom_tendency(const Matrix& u, const QuadraticROM& rom) {
  const Eigen::Index r = rom.r();
  if (u.rows() != r) throw InvalidArgument("pod_rom_tendency: expected r = " + std::to_string(r));
  Matrix kron(r * r, u.cols());
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    for (Eigen::Index s = 0; s < r; ++s) kron.col(j).segment(s * r, r) = u(s, j) * u.col(j);
  }
  Matrix out = rom.b * u + rom.c * kron;
  out.colwise() += rom.a;
  return out;
}

dynamics::Tendency pod_rom_model(const QuadraticROM& rom) {
  return [rom](const Matrix& u) { return pod_rom_tendency(u, rom); };
}

void save_coupling(const std::filesystem::path& path, const LinearCoupling& coupling,
                   const std::string& snapshot_file_hash) {
  io::write_matrix(path, coupling.phi);
  nlohmann::json side;
  side["r"] = coupling.r();
  side["n"] = coupling.n();
  side["singular_values"] = std::vector<double>(coupling.singular_values.data(),
                                                coupling.singular_values.data() + coupling.singular_values.size());
  side["snapshot_file_hash"] = snapshot_file_hash;
  io::write_text(io::sidecar_path(path), side.dump(2) + "\n");
}

LinearCoupling load_coupling(const std::filesystem::path& path) {
  LinearCoupling out;
  out.phi = io::read_matrix(path);
  out.theta = out.phi.transpose();
  const auto side = nlohmann::json::parse(io::read_text(io::sidecar_path(path)));
  if (side.at("r").get<Eigen::Index>() != out.phi.cols() || side.at("n").get<Eigen::Index>() != out.phi.rows()) {
    throw InvalidArgument("load_coupling: sidecar shape does not match " + path.string());
  }
  const auto sv = side.at("singular_values").get<std::vector<double>>();
  out.singular_values = Eigen::Map<const Vector>(sv.data(), static_cast<Eigen::Index>(sv.size()));
  return out;
}

}  // namespace mfda::rom
