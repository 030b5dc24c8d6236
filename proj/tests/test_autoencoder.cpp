#include <cmath>
#include <filesystem>
#include <map>
#include <vector>

#include "doctest.h"
#include "mfda/autoencoder.hpp"
#include "mfda/dynamics.hpp"
#include "mfda/errors.hpp"
#include "mfda/rng.hpp"

using namespace mfda;
using namespace mfda::ae;

namespace {

using Vec = std::vector<double>;

// Plain loops over Eigen storage, no Eigen arithmetic.
Vec scalar_mlp(const Matrix& w1, const Vector& b1, const Matrix& w2, const Vector& b2, const Vec& in) {
  Vec hidden(static_cast<std::size_t>(w1.rows()));
  for (Eigen::Index i = 0; i < w1.rows(); ++i) {
    double s = b1(i);
    for (Eigen::Index j = 0; j < w1.cols(); ++j) s += w1(i, j) * in[static_cast<std::size_t>(j)];
    hidden[static_cast<std::size_t>(i)] = std::tanh(s);
  }
  Vec out(static_cast<std::size_t>(w2.rows()));
  for (Eigen::Index i = 0; i < w2.rows(); ++i) {
    double s = b2(i);
    for (Eigen::Index j = 0; j < w2.cols(); ++j) s += w2(i, j) * hidden[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s;
  }
  return out;
}

Vec scalar_encode(const AutoencoderParams& p, const Vec& x) {
  return scalar_mlp(p.enc_w1, p.enc_b1, p.enc_w2, p.enc_b2, x);
}
Vec scalar_decode(const AutoencoderParams& p, const Vec& u) {
  return scalar_mlp(p.dec_w1, p.dec_b1, p.dec_w2, p.dec_b2, u);
}

Vec axpy(const Vec& a, double s, const Vec& b) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + s * b[i];
  return out;
}

double sqdist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

Vec scalar_l96(const Vec& y, double F) {
  const std::size_t n = y.size();
  Vec f(n);
  for (std::size_t k = 0; k < n; ++k) {
    f[k] = y[(k + n - 1) % n] * (y[(k + 1) % n] - y[(k + n - 2) % n]) - y[k] + F;
  }
  return f;
}

// Latent tendency via a central difference of the encoder along f: the JVP
// is linear in v, so a tiny step gives it to round-off.
Vec scalar_latent(const AutoencoderParams& p, const Vec& u, double F) {
  const Vec x = scalar_decode(p, u);
  const Vec v = scalar_l96(x, F);
  const std::size_t h = static_cast<std::size_t>(p.h());
  const std::size_t n = x.size();
  Vec q(h);
  for (std::size_t i = 0; i < h; ++i) {
    double pre = p.enc_b1(static_cast<Eigen::Index>(i));
    double w1v = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      pre += p.enc_w1(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * x[j];
      w1v += p.enc_w1(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * v[j];
    }
    const double t = std::tanh(pre);
    q[i] = (1.0 - t * t) * w1v;
  }
  Vec out(static_cast<std::size_t>(p.r()), 0.0);
  for (std::size_t a = 0; a < out.size(); ++a) {
    for (std::size_t i = 0; i < h; ++i) out[a] += p.enc_w2(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(i)) * q[i];
  }
  return out;
}

Vec scalar_rk4(const std::function<Vec(const Vec&)>& f, const Vec& y, double dt) {
  const Vec k1 = f(y);
  const Vec k2 = f(axpy(y, dt / 2, k1));
  const Vec k3 = f(axpy(y, dt / 2, k2));
  const Vec k4 = f(axpy(y, dt, k3));
  Vec out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] + dt / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
  return out;
}

double scalar_loss(const AutoencoderParams& p, const AEConfig& cfg, const Vec& x) {
  const double n = cfg.n;
  const double r = cfg.r;
  const Vec u0 = scalar_encode(p, x);
  const Vec xr = scalar_decode(p, u0);
  double loss = sqdist(x, xr) / n + cfg.lambda1 * sqdist(u0, scalar_encode(p, xr)) / r;
  Vec truth = x;
  Vec u = u0;
  for (int k = 0; k < cfg.K; ++k) {
    truth = scalar_rk4([](const Vec& y) { return scalar_l96(y, 8.0); }, truth, cfg.dt_loss);
    u = scalar_rk4([&](const Vec& z) { return scalar_latent(p, z, 8.0); }, u, cfg.dt_loss);
    loss += cfg.lambda2 * sqdist(truth, scalar_decode(p, u)) / n;
  }
  return loss;
}

Vec to_vec(const Vector& v) { return Vec(v.data(), v.data() + v.size()); }

AutoencoderParams random_params(const AEConfig& cfg, std::uint64_t seed, double scale = 0.5) {
  RandomStream rng(seed);
  AutoencoderParams p = AutoencoderParams::zeros(cfg.n, cfg.h, cfg.r);
  zip_arrays([&](auto& a) { a = scale * rng.standard_normal(a.rows(), a.cols()); }, p);
  return p;
}

const dynamics::DifferentiableTendency& l96(int n) {
  static std::map<int, dynamics::DifferentiableTendency> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, dynamics::lorenz96_model({n, 8.0})).first;
  return it->second;
}

}  // namespace

TEST_SUITE("autoencoder") {

TEST_CASE("encode and decode trivial cases") {
  AEConfig cfg{4, 2, 3};
  AutoencoderParams p = AutoencoderParams::zeros(4, 3, 2);
  CHECK(encode(Vector::Ones(4), p).isZero());
  CHECK(decode(Vector::Ones(2), p).isZero());
  p.enc_b2 << 0.5, -1.5;
  p.dec_b2 << 1, 2, 3, 4;
  CHECK(encode(Vector::Ones(4), p) == p.enc_b2);
  CHECK(decode(Vector::Ones(2), p) == p.dec_b2);
  CHECK_THROWS_AS(encode(Vector::Ones(5), p), InvalidArgument);
}

TEST_CASE("forward passes match scalar loops") {
  AEConfig cfg;
  cfg.n = 4;
  cfg.h = 3;
  cfg.r = 2;
  const auto p = random_params(cfg, 41);
  RandomStream rng(42);
  const Vector x = rng.standard_normal(4, 1);
  const Vector u = rng.standard_normal(2, 1);
  const Vector e = encode(x, p);
  const Vector d = decode(u, p);
  const Vec se = scalar_encode(p, to_vec(x));
  const Vec sd = scalar_decode(p, to_vec(u));
  for (int i = 0; i < 2; ++i) CHECK(std::abs(e(i) - se[static_cast<std::size_t>(i)]) <= 1e-12);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(d(i) - sd[static_cast<std::size_t>(i)]) <= 1e-12);
}

TEST_CASE("encoder jvp: zero direction, linear regime, finite differences") {
  AEConfig cfg;
  cfg.n = 6;
  cfg.h = 5;
  cfg.r = 3;
  const auto p = random_params(cfg, 43);
  RandomStream rng(44);
  const Vector x = rng.standard_normal(6, 1);
  CHECK(encoder_jvp(x, Vector::Zero(6), p).isZero());

  for (int trial = 0; trial < 10; ++trial) {
    const Vector xs = rng.standard_normal(6, 1);
    const Vector v = rng.standard_normal(6, 1);
    const double d = 1e-6;
    const Vector fd = (encode(xs + d * v, p) - encode(xs - d * v, p)) / (2 * d);
    const Vector jv = encoder_jvp(xs, v, p);
    CHECK((jv - fd).norm() / fd.norm() <= 1e-5);
  }

  const double eps = 1e-6;
  AutoencoderParams lin = p;
  lin.enc_b1.setZero();
  lin.enc_w1 *= eps;
  const Vector v = rng.standard_normal(6, 1);
  const Vector expected = eps * (p.enc_w2 * p.enc_w1 * v);
  CHECK((encoder_jvp(x, v, lin) - expected).norm() <= 1e-8 * expected.norm());
}

TEST_CASE("latent tendency") {
  AEConfig cfg;
  cfg.n = 6;
  cfg.h = 5;
  cfg.r = 3;
  const auto p = random_params(cfg, 45);
  RandomStream rng(46);
  const Matrix u = rng.standard_normal(3, 4);
  const dynamics::Tendency zero = [](const Matrix& y) { return Matrix::Zero(y.rows(), y.cols()).eval(); };
  CHECK(nn_rom_tendency(u, p, zero).isZero());
  const auto f = l96(6).f;
  const Matrix x = decode(u, p);
  CHECK((nn_rom_tendency(u, p, f) - encoder_jvp(x, f(x), p)).cwiseAbs().maxCoeff() < 1e-14);
  const Vec s = scalar_latent(p, to_vec(u.col(0)), 8.0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(nn_rom_tendency(u, p, f)(i, 0) - s[static_cast<std::size_t>(i)]) < 1e-12);
}

TEST_CASE("affine embedding of a linear coupling reproduces the projected tendency") {
  // W1 = eps Theta, W2 = Theta^T / eps keeps tanh in its linear regime.
  const int n = 8;
  const int r = 3;
  RandomStream rng(47);
  const Eigen::HouseholderQR<Matrix> qr(rng.standard_normal(n, n));
  const Matrix phi = qr.householderQ() * Matrix::Identity(n, r);
  const Matrix theta = phi.transpose();
  const double eps = 1e-5;
  AutoencoderParams p = AutoencoderParams::zeros(n, r, r);
  p.enc_w1 = eps * theta;
  p.enc_w2 = Matrix::Identity(r, r) / eps;
  p.dec_w1 = eps * Matrix::Identity(r, r);
  p.dec_w2 = phi / eps;
  const Matrix u = rng.standard_normal(r, 5);
  const auto f = l96(n).f;
  const Matrix expected = theta * f(phi * u);
  CHECK((nn_rom_tendency(u, p, f) - expected).cwiseAbs().maxCoeff() < 1e-6 * expected.cwiseAbs().maxCoeff());
}

TEST_CASE("loss term isolation and scalar oracle") {
  AEConfig cfg;
  cfg.n = 4;
  cfg.h = 3;
  cfg.r = 2;
  cfg.K = 0;
  cfg.lambda1 = 0.0;
  const auto p = random_params(cfg, 48);
  RandomStream rng(49);
  const Matrix x = rng.standard_normal(4, 3);
  const auto f = l96(4).f;
  const auto terms = snapshot_loss(x, trajectory_targets(x, cfg, f), p, cfg, f);
  CHECK(terms.left_inverse == 0.0);
  CHECK(terms.trajectory == 0.0);
  CHECK(terms.total() == doctest::Approx(reconstruction_mse(x, p) * 3).epsilon(1e-12));

  cfg.K = 1;
  cfg.lambda1 = 7.0;
  cfg.lambda2 = 0.3;
  const auto full = snapshot_loss(x, trajectory_targets(x, cfg, f), p, cfg, f);
  double oracle = 0.0;
  for (int j = 0; j < 3; ++j) oracle += scalar_loss(p, cfg, to_vec(x.col(j)));
  CHECK(std::abs(full.total() - oracle) <= 1e-10 * std::max(1.0, oracle));

  cfg.K = 3;
  const auto k3 = snapshot_loss(x, trajectory_targets(x, cfg, f), p, cfg, f);
  double oracle3 = 0.0;
  for (int j = 0; j < 3; ++j) oracle3 += scalar_loss(p, cfg, to_vec(x.col(j)));
  CHECK(std::abs(k3.total() - oracle3) <= 1e-10 * std::max(1.0, oracle3));
}

TEST_CASE("loss vanishes for an exact autoencoder of an invariant set") {
  // Fixed point F*1: constant encoder/decoder reproduce it and the latent
  // dynamics are exactly stationary.
  AEConfig cfg;
  cfg.n = 5;
  cfg.h = 2;
  cfg.r = 1;
  AutoencoderParams p = AutoencoderParams::zeros(5, 2, 1);
  p.dec_b2 = Vector::Constant(5, 8.0);
  const Matrix x = Matrix::Constant(5, 2, 8.0);
  const auto& fom = l96(5);
  const auto targets = trajectory_targets(x, cfg, fom.f);
  CHECK(snapshot_loss(x, targets, p, cfg, fom.f).total() == 0.0);
  const auto g = loss_gradient(x, targets, p, cfg, fom);
  zip_arrays([](const auto& a) { CHECK(a.isZero()); }, g.grad);
}

TEST_CASE("loss gradient matches central differences on 20 random configs") {
  RandomStream meta(50);
  for (int trial = 0; trial < 20; ++trial) {
    AEConfig cfg;
    cfg.n = 4 + static_cast<int>(meta.uniform(0, 4));
    cfg.h = 2 + static_cast<int>(meta.uniform(0, 5));
    cfg.r = 1 + static_cast<int>(meta.uniform(0, 3));
    cfg.K = static_cast<int>(meta.uniform(0, 4));
    cfg.lambda1 = trial % 3 == 0 ? 1e3 : meta.uniform(0.0, 10.0);
    cfg.lambda2 = meta.uniform(0.1, 2.0);
    cfg.dt_loss = 0.05;
    const int batch = 1 + static_cast<int>(meta.uniform(0, 4));
    CAPTURE(trial);
    const auto p = random_params(cfg, 100 + static_cast<std::uint64_t>(trial), 0.4);
    RandomStream rng(200 + static_cast<std::uint64_t>(trial));
    const Matrix x = 8.0 + 2.0 * rng.standard_normal(cfg.n, batch).array();
    const auto& fom = l96(cfg.n);
    const auto targets = trajectory_targets(x, cfg, fom.f);
    const auto g = loss_gradient(x, targets, p, cfg, fom);
    const Vector analytic = g.grad.flatten();
    const Vector theta = p.flatten();
    Vector fd(theta.size());
    const double d = 1e-5;
    AutoencoderParams q = p;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Vector t = theta;
      t(i) += d;
      q.assign_flat(t);
      const double up = snapshot_loss(x, targets, q, cfg, fom.f).total();
      t(i) -= 2 * d;
      q.assign_flat(t);
      const double down = snapshot_loss(x, targets, q, cfg, fom.f).total();
      fd(i) = (up - down) / (2 * d);
    }
    const double rel = (analytic - fd).norm() / fd.norm();
    CHECK(rel <= 1e-4);
    const double floor = 1e-3 * fd.cwiseAbs().maxCoeff();
    int bad = 0;
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
      if (std::abs(analytic(i) - fd(i)) > 1e-4 * std::max(std::abs(fd(i)), floor)) ++bad;
    }
    CHECK(bad == 0);
    CHECK(g.loss.total() == doctest::Approx(snapshot_loss(x, targets, p, cfg, fom.f).total()).epsilon(1e-14));
  }
}

TEST_CASE("gradient of a batch is the sum of per-snapshot gradients") {
  AEConfig cfg;
  cfg.n = 5;
  cfg.h = 4;
  cfg.r = 2;
  cfg.K = 2;
  const auto p = random_params(cfg, 51);
  RandomStream rng(52);
  const Matrix x = 8.0 + rng.standard_normal(5, 2).array();
  const auto& fom = l96(5);
  const auto both = loss_gradient(x, trajectory_targets(x, cfg, fom.f), p, cfg, fom).grad.flatten();
  Vector sum = Vector::Zero(both.size());
  for (int j = 0; j < 2; ++j) {
    const Matrix xj = x.col(j);
    sum += loss_gradient(xj, trajectory_targets(xj, cfg, fom.f), p, cfg, fom).grad.flatten();
  }
  CHECK((both - sum).cwiseAbs().maxCoeff() <= 1e-10 * both.cwiseAbs().maxCoeff());
}

TEST_CASE("rollout clipping flags the batch and zeroes the clipped adjoint") {
  AEConfig cfg;
  cfg.n = 4;
  cfg.h = 3;
  cfg.r = 2;
  cfg.K = 2;
  cfg.clip_norm = 1e-3;
  const auto p = random_params(cfg, 53, 1.0);
  RandomStream rng(54);
  const Matrix x = 8.0 + rng.standard_normal(4, 2).array();
  const auto& fom = l96(4);
  const auto targets = trajectory_targets(x, cfg, fom.f);
  const auto terms = snapshot_loss(x, targets, p, cfg, fom.f);
  CHECK(terms.clipped);
  const auto g = loss_gradient(x, targets, p, cfg, fom);
  CHECK(g.loss.clipped);
  // With every rollout state clipped, the encoder receives no gradient from
  // the trajectory term, so it equals the K = 0 gradient on the encoder.
  AEConfig k0 = cfg;
  k0.K = 0;
  const auto g0 = loss_gradient(x, trajectory_targets(x, k0, fom.f), p, k0, fom);
  CHECK((g.grad.enc_w1 - g0.grad.enc_w1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("adam") {
  AEConfig cfg;
  cfg.n = 4;
  cfg.h = 3;
  cfg.r = 2;
  const auto p = random_params(cfg, 55);
  auto zero_state = AdamState::fresh(p);
  CHECK(adam_step(p, AutoencoderParams::zeros(4, 3, 2), zero_state) == p);

  RandomStream rng(56);
  AutoencoderParams g = random_params(cfg, 57);
  auto state = AdamState::fresh(p, 0.01);
  const auto p1 = adam_step(p, g, state);
  // First step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
  const Vector a = p.flatten();
  const Vector b = p1.flatten();
  const Vector gv = g.flatten();
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double expected = a(i) - 0.01 * gv(i) / (std::abs(gv(i)) + 1e-8);
    CHECK(b(i) == doctest::Approx(expected).epsilon(1e-12));
  }
  // Second step by hand from the stored moments.
  const AutoencoderParams g2 = random_params(cfg, 58);
  const Vector g2v = g2.flatten();
  const auto p2 = adam_step(p1, g2, state);
  const Vector c = p2.flatten();
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double m = 0.9 * 0.1 * gv(i) + 0.1 * g2v(i);
    const double v = 0.999 * 0.001 * gv(i) * gv(i) + 0.001 * g2v(i) * g2v(i);
    const double mh = m / (1 - 0.81);
    const double vh = v / (1 - 0.999 * 0.999);
    CHECK(c(i) == doctest::Approx(b(i) - 0.01 * mh / (std::sqrt(vh) + 1e-8)).epsilon(1e-12));
  }
  CHECK(state.step == 2);
}

TEST_CASE("params flatten, compare and persist") {
  AEConfig cfg;
  cfg.n = 6;
  cfg.h = 4;
  cfg.r = 3;
  const auto p = glorot_init(cfg, 59);
  CHECK(p.enc_b1.isZero());
  CHECK(p.dec_b2.isZero());
  const double limit = std::sqrt(6.0 / (6 + 4));
  CHECK(p.enc_w1.cwiseAbs().maxCoeff() <= limit);
  CHECK(glorot_init(cfg, 59) == p);
  CHECK(!(glorot_init(cfg, 60) == p));

  AutoencoderParams q = AutoencoderParams::zeros(6, 4, 3);
  q.assign_flat(p.flatten());
  CHECK(q == p);
  CHECK(p.parameter_count() == 4 * 6 + 4 + 3 * 4 + 3 + 4 * 3 + 4 + 6 * 4 + 6);

  ParamsMetadata meta;
  meta.config = cfg;
  meta.train_config.seed = 77;
  meta.best_epoch = 3;
  save_params("ae_roundtrip.bin", p, meta);
  ParamsMetadata back;
  CHECK(load_params("ae_roundtrip.bin", &back) == p);
  CHECK(back.train_config.seed == 77);
  CHECK(back.best_epoch == 3);
  CHECK(back.config.r == 3);
  std::filesystem::remove("ae_roundtrip.bin");
  std::filesystem::remove("ae_roundtrip.json");
}

TEST_CASE("training on a linear subspace reconstructs well and is deterministic") {
  const int n = 6;
  const int r = 2;
  RandomStream rng(61);
  const Eigen::HouseholderQR<Matrix> qr(rng.standard_normal(n, n));
  const Matrix basis = qr.householderQ() * Matrix::Identity(n, r);
  dynamics::Trajectory traj;
  traj.states = basis * (0.5 * rng.standard_normal(r, 200));
  for (int i = 0; i < 200; ++i) traj.times.push_back(i);
  AEConfig cfg;
  cfg.n = n;
  cfg.r = r;
  cfg.h = 8;
  cfg.K = 0;
  cfg.lambda1 = 1.0;
  TrainConfig tcfg;
  tcfg.epochs = 300;
  tcfg.batch_size = 20;
  tcfg.learning_rate = 1e-2;
  tcfg.seed = 3;
  const auto& fom = l96(n);
  const auto a = train(traj, cfg, tcfg, fom);
  CHECK(reconstruction_mse(traj.states, a.params) < 1e-3);
  CHECK(a.log.size() == 300);
  CHECK(a.log[static_cast<std::size_t>(a.best_epoch - 1)].holdout_loss < a.log.front().holdout_loss);
  CHECK(a.final_loss == a.log[static_cast<std::size_t>(a.best_epoch - 1)].holdout_loss);

  tcfg.epochs = 5;
  const auto b1 = train(traj, cfg, tcfg, fom);
  const auto b2 = train(traj, cfg, tcfg, fom);
  CHECK(b1.params == b2.params);

  tcfg.batch_size = 1000;
  CHECK_THROWS_AS(train(traj, cfg, tcfg, fom), InvalidArgument);
}

}  // TEST_SUITE
