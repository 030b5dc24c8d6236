#include "mfda/autoencoder.hpp"

#include <cmath>
#include <string>

#include "mfda/errors.hpp"
#include "mfda/rng.hpp"

namespace mfda::ae {

AutoencoderParams AutoencoderParams::zeros(Eigen::Index n, Eigen::Index h, Eigen::Index r) {
  AutoencoderParams p;
  p.enc_w1 = Matrix::Zero(h, n);
  p.enc_b1 = Vector::Zero(h);
  p.enc_w2 = Matrix::Zero(r, h);
  p.enc_b2 = Vector::Zero(r);
  p.dec_w1 = Matrix::Zero(h, r);
  p.dec_b1 = Vector::Zero(h);
  p.dec_w2 = Matrix::Zero(n, h);
  p.dec_b2 = Vector::Zero(n);
  return p;
}

void AutoencoderParams::validate() const {
  const Eigen::Index nn = n(), hh = h(), rr = r();
  const bool ok = enc_b1.size() == hh && enc_w2.cols() == hh && enc_b2.size() == rr && dec_w1.rows() == hh &&
                  dec_w1.cols() == rr && dec_b1.size() == hh && dec_w2.rows() == nn && dec_w2.cols() == hh &&
                  dec_b2.size() == nn && nn > 0 && hh > 0 && rr > 0;
  if (!ok) throw InvalidArgument("AutoencoderParams: inconsistent shapes");
  bool finite = true;
  zip_arrays([&](const auto& a) { finite = finite && a.allFinite(); }, *this);
  if (!finite) throw InvalidArgument("AutoencoderParams: non-finite entries");
}

Eigen::Index AutoencoderParams::parameter_count() const {
  Eigen::Index count = 0;
  zip_arrays([&](const auto& a) { count += a.size(); }, *this);
  return count;
}

Vector AutoencoderParams::flatten() const {
  Vector flat(parameter_count());
  Eigen::Index offset = 0;
  zip_arrays(
      [&](const auto& a) {
        flat.segment(offset, a.size()) = Eigen::Map<const Vector>(a.data(), a.size());
        offset += a.size();
      },
      *this);
  return flat;
}

void AutoencoderParams::assign_flat(const Vector& flat) {
  if (flat.size() != parameter_count()) throw InvalidArgument("assign_flat: size mismatch");
  Eigen::Index offset = 0;
  zip_arrays(
      [&](auto& a) {
        Eigen::Map<Vector>(a.data(), a.size()) = flat.segment(offset, a.size());
        offset += a.size();
      },
      *this);
}

AutoencoderParams& AutoencoderParams::operator+=(const AutoencoderParams& other) {
  zip_arrays([](auto& a, const auto& b) { a += b; }, *this, other);
  return *this;
}

bool AutoencoderParams::operator==(const AutoencoderParams& other) const {
  bool same = true;
  zip_arrays([&](const auto& a, const auto& b) { same = same && a.rows() == b.rows() && a.cols() == b.cols() && a == b; },
             *this, other);
  return same;
}

void AEConfig::validate() const {
  if (n < 1 || r < 1 || h < 1) throw InvalidArgument("AEConfig: dimensions must be positive");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw InvalidArgument("AEConfig: loss weights must be non-negative");
  if (K < 0) throw InvalidArgument("AEConfig: K must be non-negative");
  if (K > 0 && !(dt_loss > 0.0)) throw InvalidArgument("AEConfig: dt_loss must be positive");
  if (!(clip_norm > 0.0)) throw InvalidArgument("AEConfig: clip_norm must be positive");
}

AutoencoderParams glorot_init(const AEConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  RandomStream rng(StreamKey{seed, 0, 0, StreamRole::kTrainInit});
  auto p = AutoencoderParams::zeros(cfg.n, cfg.h, cfg.r);
  const auto fill = [&rng](Matrix& w) {
    const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-bound, bound);
    }
  };
  fill(p.enc_w1);
  fill(p.enc_w2);
  fill(p.dec_w1);
  fill(p.dec_w2);
  return p;
}

namespace {

void check_rows(const Matrix& m, Eigen::Index rows, const char* who) {
  if (m.rows() != rows) {
    throw InvalidArgument(std::string(who) + ": expected " + std::to_string(rows) + " rows, got " +
                          std::to_string(m.rows()));
  }
}

// Eigen only vectorizes tanh for float. exp(-2|a|) keeps the quotient away
// from overflow; the absolute error stays near one ulp for small |a|.
void tanh_inplace(Matrix& a) {
  const Eigen::ArrayXXd e = (-2.0 * a.array().abs()).exp();
  a.array() = a.array().sign() * (1.0 - e) / (1.0 + e);
}

/// One dense tanh layer followed by an affine readout, with the activations
/// kept for the backward pass.
struct MlpTape {
  Matrix input;   // in x B
  Matrix hidden;  // tanh activations, h x B
};

Matrix mlp_forward(const Matrix& w1, const Vector& b1, const Matrix& w2, const Vector& b2, const Matrix& in,
                   MlpTape* tape) {
  Matrix hidden = w1 * in;
  hidden.colwise() += b1;
  tanh_inplace(hidden);
  Matrix out = w2 * hidden;
  out.colwise() += b2;
  if (tape != nullptr) {
    tape->input = in;
    tape->hidden = std::move(hidden);
  }
  return out;
}

/// Accumulates parameter gradients and returns the input adjoint.
Matrix mlp_backward(const Matrix& w1, const Matrix& w2, const MlpTape& tape, const Matrix& out_bar, Matrix& gw1,
                    Vector& gb1, Matrix& gw2, Vector& gb2) {
  gw2.noalias() += out_bar * tape.hidden.transpose();
  gb2 += out_bar.rowwise().sum();
  Matrix pre_bar = (w2.transpose() * out_bar).cwiseProduct((1.0 - tape.hidden.array().square()).matrix());
  gw1.noalias() += pre_bar * tape.input.transpose();
  gb1 += pre_bar.rowwise().sum();
  return w1.transpose() * pre_bar;
}

Matrix encode_taped(const Matrix& x, const AutoencoderParams& p, MlpTape* tape) {
  return mlp_forward(p.enc_w1, p.enc_b1, p.enc_w2, p.enc_b2, x, tape);
}

Matrix decode_taped(const Matrix& u, const AutoencoderParams& p, MlpTape* tape) {
  return mlp_forward(p.dec_w1, p.dec_b1, p.dec_w2, p.dec_b2, u, tape);
}

Matrix encode_backward(const AutoencoderParams& p, const MlpTape& tape, const Matrix& u_bar, AutoencoderParams& g) {
  return mlp_backward(p.enc_w1, p.enc_w2, tape, u_bar, g.enc_w1, g.enc_b1, g.enc_w2, g.enc_b2);
}

Matrix decode_backward(const AutoencoderParams& p, const MlpTape& tape, const Matrix& x_bar, AutoencoderParams& g) {
  return mlp_backward(p.dec_w1, p.dec_w2, tape, x_bar, g.dec_w1, g.dec_b1, g.dec_w2, g.dec_b2);
}

/// Tape of one latent tendency evaluation g(u) = theta'(phi(u)) f(phi(u)).
struct TendencyTape {
  MlpTape decoder;
  Matrix state;      // x = phi(u)
  Matrix velocity;   // f(x)
  Matrix act;        // tanh(W1 x + b1)
  Matrix dact;       // 1 - act^2
  Matrix w1v;        // W1 f(x)
  Matrix q;          // dact .* w1v
};

Matrix tendency_forward(const Matrix& u, const AutoencoderParams& p, const dynamics::Tendency& f,
                        TendencyTape* tape) {
  MlpTape dec;
  Matrix x = decode_taped(u, p, tape != nullptr ? &dec : nullptr);
  Matrix v = f(x);
  Matrix act = p.enc_w1 * x;
  act.colwise() += p.enc_b1;
  tanh_inplace(act);
  Matrix dact = (1.0 - act.array().square()).matrix();
  Matrix w1v = p.enc_w1 * v;
  Matrix q = dact.cwiseProduct(w1v);
  Matrix out = p.enc_w2 * q;
  if (tape != nullptr) {
    tape->decoder = std::move(dec);
    tape->state = std::move(x);
    tape->velocity = std::move(v);
    tape->act = std::move(act);
    tape->dact = std::move(dact);
    tape->w1v = std::move(w1v);
    tape->q = std::move(q);
  }
  return out;
}

Matrix tendency_backward(const AutoencoderParams& p, const dynamics::DifferentiableTendency& fom,
                         const TendencyTape& t, const Matrix& out_bar, AutoencoderParams& g) {
  g.enc_w2.noalias() += out_bar * t.q.transpose();
  const Matrix q_bar = p.enc_w2.transpose() * out_bar;
  const Matrix w1v_bar = q_bar.cwiseProduct(t.dact);
  // d(1 - tanh^2(a))/da = -2 tanh(a) (1 - tanh^2(a))
  const Matrix pre_bar = (q_bar.array() * t.w1v.array() * (-2.0) * t.act.array() * t.dact.array()).matrix();
  g.enc_w1.noalias() += w1v_bar * t.velocity.transpose();
  g.enc_w1.noalias() += pre_bar * t.state.transpose();
  g.enc_b1 += pre_bar.rowwise().sum();
  const Matrix v_bar = p.enc_w1.transpose() * w1v_bar;
  Matrix x_bar = p.enc_w1.transpose() * pre_bar;
  x_bar += fom.vjp(t.state, v_bar);
  return decode_backward(p, t.decoder, x_bar, g);
}

struct Rk4Tape {
  std::array<TendencyTape, 4> stages;
  std::vector<bool> clipped;  // per column, result was rescaled
};

/// One RK4 step of the latent dynamics with norm clipping of the result.
Matrix latent_rk4_forward(const Matrix& u, const AutoencoderParams& p, const dynamics::Tendency& f, double dt,
                          double clip_norm, Rk4Tape* tape, bool& any_clipped) {
  TendencyTape* st = tape != nullptr ? tape->stages.data() : nullptr;
  const Matrix k1 = tendency_forward(u, p, f, st ? &st[0] : nullptr);
  const Matrix k2 = tendency_forward(u + (0.5 * dt) * k1, p, f, st ? &st[1] : nullptr);
  const Matrix k3 = tendency_forward(u + (0.5 * dt) * k2, p, f, st ? &st[2] : nullptr);
  const Matrix k4 = tendency_forward(u + dt * k3, p, f, st ? &st[3] : nullptr);
  Matrix out = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (tape != nullptr) tape->clipped.assign(static_cast<std::size_t>(out.cols()), false);
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double norm = out.col(j).norm();
    if (!(norm <= clip_norm)) {
      any_clipped = true;
      if (std::isfinite(norm)) {
        out.col(j) *= clip_norm / norm;
      } else {
        out.col(j).setConstant(clip_norm / std::sqrt(static_cast<double>(out.rows())));
      }
      if (tape != nullptr) tape->clipped[static_cast<std::size_t>(j)] = true;
    }
  }
  return out;
}

/// Adjoint of one latent RK4 step: returns u_bar given the adjoint of the
/// step's output.
Matrix latent_rk4_backward(const AutoencoderParams& p, const dynamics::DifferentiableTendency& fom, double dt,
                           const Rk4Tape& tape, Matrix out_bar, AutoencoderParams& g) {
  for (Eigen::Index j = 0; j < out_bar.cols(); ++j) {
    if (tape.clipped[static_cast<std::size_t>(j)]) out_bar.col(j).setZero();
  }
  Matrix u_bar = out_bar;
  Matrix k_bar4 = (dt / 6.0) * out_bar;
  Matrix k_bar3 = (dt / 3.0) * out_bar;
  Matrix k_bar2 = (dt / 3.0) * out_bar;
  Matrix k_bar1 = (dt / 6.0) * out_bar;

  Matrix z_bar = tendency_backward(p, fom, tape.stages[3], k_bar4, g);
  u_bar += z_bar;
  k_bar3 += dt * z_bar;
  z_bar = tendency_backward(p, fom, tape.stages[2], k_bar3, g);
  u_bar += z_bar;
  k_bar2 += (0.5 * dt) * z_bar;
  z_bar = tendency_backward(p, fom, tape.stages[1], k_bar2, g);
  u_bar += z_bar;
  k_bar1 += (0.5 * dt) * z_bar;
  u_bar += tendency_backward(p, fom, tape.stages[0], k_bar1, g);
  return u_bar;
}

void check_targets(const Matrix& x, const std::vector<Matrix>& targets, const AEConfig& cfg) {
  if (static_cast<int>(targets.size()) != cfg.K) throw InvalidArgument("snapshot_loss: expected K target matrices");
  for (const auto& t : targets) {
    if (t.rows() != x.rows() || t.cols() != x.cols()) throw InvalidArgument("snapshot_loss: target shape mismatch");
  }
}

void check_config_matches(const AutoencoderParams& p, const AEConfig& cfg) {
  if (p.n() != cfg.n || p.r() != cfg.r || p.h() != cfg.h) {
    throw InvalidArgument("autoencoder parameters do not match AEConfig dimensions");
  }
}

/// Forward pass of the loss; fills tapes when `grad` is requested.
struct LossTape {
  MlpTape enc0, dec0, enc1;
  Matrix r_recon, r_latent;
  std::vector<Rk4Tape> steps;
  std::vector<MlpTape> rollout_dec;
  std::vector<Matrix> r_traj;
};

LossTerms loss_forward(const Matrix& x, const std::vector<Matrix>& targets, const AutoencoderParams& p,
                       const AEConfig& cfg, const dynamics::Tendency& f, LossTape* tape) {
  cfg.validate();
  check_config_matches(p, cfg);
  check_rows(x, cfg.n, "snapshot_loss");
  check_targets(x, targets, cfg);
  const double n = cfg.n;
  const double r = cfg.r;

  LossTerms terms;
  MlpTape enc0, dec0, enc1;
  const bool taped = tape != nullptr;
  const Matrix u0 = encode_taped(x, p, taped ? &enc0 : nullptr);
  const Matrix xr = decode_taped(u0, p, taped ? &dec0 : nullptr);
  Matrix r_recon = x - xr;
  terms.reconstruction = r_recon.squaredNorm() / n;

  if (cfg.lambda1 != 0.0 || taped) {
    const Matrix u1 = encode_taped(xr, p, taped ? &enc1 : nullptr);
    Matrix r_latent = u0 - u1;
    terms.left_inverse = cfg.lambda1 * r_latent.squaredNorm() / r;
    if (taped) tape->r_latent = std::move(r_latent);
  }

  if (taped) {
    tape->steps.resize(static_cast<std::size_t>(cfg.K));
    tape->rollout_dec.resize(static_cast<std::size_t>(cfg.K));
    tape->r_traj.resize(static_cast<std::size_t>(cfg.K));
  }
  Matrix u = u0;
  for (int k = 0; k < cfg.K; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    u = latent_rk4_forward(u, p, f, cfg.dt_loss, cfg.clip_norm, taped ? &tape->steps[ks] : nullptr, terms.clipped);
    const Matrix y = decode_taped(u, p, taped ? &tape->rollout_dec[ks] : nullptr);
    Matrix r_traj = targets[ks] - y;
    terms.trajectory += cfg.lambda2 * r_traj.squaredNorm() / n;
    if (taped) tape->r_traj[ks] = std::move(r_traj);
  }

  if (taped) {
    tape->enc0 = std::move(enc0);
    tape->dec0 = std::move(dec0);
    tape->enc1 = std::move(enc1);
    tape->r_recon = std::move(r_recon);
  }
  return terms;
}

}  // namespace

Matrix encode(const Matrix& x, const AutoencoderParams& p) {
  check_rows(x, p.n(), "encode");
  return encode_taped(x, p, nullptr);
}

Matrix decode(const Matrix& u, const AutoencoderParams& p) {
  check_rows(u, p.r(), "decode");
  return decode_taped(u, p, nullptr);
}

Matrix encoder_jvp(const Matrix& x, const Matrix& v, const AutoencoderParams& p) {
  check_rows(x, p.n(), "encoder_jvp");
  if (v.rows() != x.rows() || v.cols() != x.cols()) throw InvalidArgument("encoder_jvp: x and v differ in shape");
  Matrix act = p.enc_w1 * x;
  act.colwise() += p.enc_b1;
  tanh_inplace(act);
  const Matrix dact = (1.0 - act.array().square()).matrix();
  return p.enc_w2 * dact.cwiseProduct(p.enc_w1 * v);
}

Matrix nn_rom_tendency(const Matrix& u, const AutoencoderParams& p, const dynamics::Tendency& f) {
  check_rows(u, p.r(), "nn_rom_tendency");
  Matrix out = tendency_forward(u, p, f, nullptr);
  if (const auto bad = first_nonfinite_column(out); bad >= 0) {
    throw NumericalBlowup("nn_rom_tendency: non-finite latent tendency", 0, bad);
  }
  return out;
}

dynamics::Tendency nn_rom_model(const AutoencoderParams& p, const dynamics::Tendency& f) {
  return [p, f](const Matrix& u) { return nn_rom_tendency(u, p, f); };
}

std::vector<Matrix> trajectory_targets(const Matrix& x, const AEConfig& cfg, const dynamics::Tendency& f) {
  cfg.validate();
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(cfg.K));
  Matrix state = x;
  for (int k = 0; k < cfg.K; ++k) {
    state = dynamics::rk4_step(f, state, cfg.dt_loss, static_cast<std::size_t>(k));
    out.push_back(state);
  }
  return out;
}

LossTerms snapshot_loss(const Matrix& x, const std::vector<Matrix>& targets, const AutoencoderParams& p,
                        const AEConfig& cfg, const dynamics::Tendency& f) {
  return loss_forward(x, targets, p, cfg, f, nullptr);
}

LossGradient loss_gradient(const Matrix& x, const std::vector<Matrix>& targets, const AutoencoderParams& p,
                           const AEConfig& cfg, const dynamics::DifferentiableTendency& fom) {
  if (x.cols() == 0) throw InvalidArgument("loss_gradient: empty batch");
  LossTape tape;
  LossGradient out;
  out.loss = loss_forward(x, targets, p, cfg, fom.f, &tape);
  out.grad = AutoencoderParams::zeros(p.n(), p.h(), p.r());
  auto& g = out.grad;
  const double n = cfg.n;
  const double r = cfg.r;

  // Rollout: walk the latent trajectory backwards.
  Matrix u0_bar = Matrix::Zero(cfg.r, x.cols());
  if (cfg.K > 0) {
    Matrix u_bar = Matrix::Zero(cfg.r, x.cols());
    for (int k = cfg.K - 1; k >= 0; --k) {
      const auto ks = static_cast<std::size_t>(k);
      const Matrix y_bar = (-2.0 * cfg.lambda2 / n) * tape.r_traj[ks];
      u_bar += decode_backward(p, tape.rollout_dec[ks], y_bar, g);
      u_bar = latent_rk4_backward(p, fom, cfg.dt_loss, tape.steps[ks], std::move(u_bar), g);
    }
    u0_bar += u_bar;
  }

  // Left-inverse term: r_latent = u0 - theta(phi(u0)).
  const Matrix latent_bar = (2.0 * cfg.lambda1 / r) * tape.r_latent;
  u0_bar += latent_bar;
  Matrix xr_bar = encode_backward(p, tape.enc1, -latent_bar, g);

  // Reconstruction term: r_recon = x - phi(u0).
  xr_bar += (-2.0 / n) * tape.r_recon;
  u0_bar += decode_backward(p, tape.dec0, xr_bar, g);
  encode_backward(p, tape.enc0, u0_bar, g);

  bool finite = std::isfinite(out.loss.total());
  zip_arrays([&](const auto& a) { finite = finite && a.allFinite(); }, g);
  if (!finite) throw TrainingDivergence("loss_gradient: non-finite loss or gradient", 0, 0);
  return out;
}

double reconstruction_mse(const Matrix& x, const AutoencoderParams& p) {
  const Matrix xr = decode(encode(x, p), p);
  return (x - xr).squaredNorm() / static_cast<double>(x.rows() * std::max<Eigen::Index>(1, x.cols()));
}

}  // namespace mfda::ae
