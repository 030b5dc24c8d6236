#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mfda/dynamics.hpp"
#include "mfda/linalg.hpp"

namespace mfda::ae {

/// One-hidden-layer tanh encoder theta: R^n -> R^r and decoder
/// phi: R^r -> R^n,
///   theta(x) = W2 tanh(W1 x + b1) + b2,  phi(u) = V2 tanh(V1 u + c1) + c2.
struct AutoencoderParams {
  Matrix enc_w1;  ///< h x n
  Vector enc_b1;  ///< h
  Matrix enc_w2;  ///< r x h
  Vector enc_b2;  ///< r
  Matrix dec_w1;  ///< h x r
  Vector dec_b1;  ///< h
  Matrix dec_w2;  ///< n x h
  Vector dec_b2;  ///< n

  static constexpr std::size_t kArrayCount = 8;

  static AutoencoderParams zeros(Eigen::Index n, Eigen::Index h, Eigen::Index r);

  Eigen::Index n() const noexcept { return enc_w1.cols(); }
  Eigen::Index h() const noexcept { return enc_w1.rows(); }
  Eigen::Index r() const noexcept { return enc_w2.rows(); }

  auto arrays() { return std::tie(enc_w1, enc_b1, enc_w2, enc_b2, dec_w1, dec_b1, dec_w2, dec_b2); }
  auto arrays() const { return std::tie(enc_w1, enc_b1, enc_w2, enc_b2, dec_w1, dec_b1, dec_w2, dec_b2); }

  /// Throws InvalidArgument on inconsistent shapes or non-finite entries.
  void validate() const;

  Eigen::Index parameter_count() const;
  Vector flatten() const;
  void assign_flat(const Vector& flat);

  AutoencoderParams& operator+=(const AutoencoderParams& other);
  bool operator==(const AutoencoderParams& other) const;
};

/// Calls f(a_i, b_i, ...) for each of the eight arrays of the given
/// parameter sets, in declaration order.
template <class F, class... Ps>
void zip_arrays(F&& f, Ps&&... ps) {
  auto one = [&]<std::size_t I>(std::integral_constant<std::size_t, I>) { f(std::get<I>(ps.arrays())...); };
  [&]<std::size_t... I>(std::index_sequence<I...>) {
    (one(std::integral_constant<std::size_t, I>{}), ...);
  }(std::make_index_sequence<AutoencoderParams::kArrayCount>{});
}

struct AEConfig {
  int n = 40;
  int r = 28;
  int h = 200;
  double lambda1 = 1e3;
  double lambda2 = 1.0;
  int K = 5;
  double dt_loss = 0.05;
  /// Latent rollout states with a larger norm are rescaled to this norm and
  /// excluded from backpropagation.
  double clip_norm = 1e6;

  void validate() const;
};

/// Glorot-uniform weights, zero biases.
AutoencoderParams glorot_init(const AEConfig& cfg, std::uint64_t seed);

Matrix encode(const Matrix& x, const AutoencoderParams& p);
Matrix decode(const Matrix& u, const AutoencoderParams& p);

/// J_theta(x) v = W2 diag(1 - tanh^2(W1 x + b1)) W1 v, column-wise.
Matrix encoder_jvp(const Matrix& x, const Matrix& v, const AutoencoderParams& p);

/// Latent dynamics du/dt = theta'(phi(u)) f(phi(u)).
Matrix nn_rom_tendency(const Matrix& u, const AutoencoderParams& p, const dynamics::Tendency& f);

dynamics::Tendency nn_rom_model(const AutoencoderParams& p, const dynamics::Tendency& f);

/// Full-order RK4 targets M_{t, t + k dt_loss}(x) for k = 1..K, one n x B
/// matrix per k.
std::vector<Matrix> trajectory_targets(const Matrix& x, const AEConfig& cfg, const dynamics::Tendency& f);

struct LossTerms {
  double reconstruction = 0.0;
  double left_inverse = 0.0;
  double trajectory = 0.0;
  bool clipped = false;

  double total() const noexcept { return reconstruction + left_inverse + trajectory; }
};

/// Summed per-snapshot loss over the columns of `x`:
///   (1/n)|x - phi(theta(x))|^2 + (lambda1/r)|theta(x) - theta(phi(theta(x)))|^2
///   + sum_k (lambda2/n)|M_k(x) - phi(M^AE_k(theta(x)))|^2.
/// `targets` come from trajectory_targets.
LossTerms snapshot_loss(const Matrix& x, const std::vector<Matrix>& targets, const AutoencoderParams& p,
                        const AEConfig& cfg, const dynamics::Tendency& f);

struct LossGradient {
  AutoencoderParams grad;
  LossTerms loss;
};

/// Reverse-mode gradient of snapshot_loss with respect to every parameter,
/// including backpropagation through the latent RK4 rollout. Throws
/// TrainingDivergence (epoch/batch 0) on a non-finite result.
LossGradient loss_gradient(const Matrix& x, const std::vector<Matrix>& targets, const AutoencoderParams& p,
                           const AEConfig& cfg, const dynamics::DifferentiableTendency& fom);

struct AdamState {
  AutoencoderParams m;
  AutoencoderParams v;
  std::int64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState fresh(const AutoencoderParams& like, double learning_rate = 1e-3, double beta1 = 0.9,
                         double beta2 = 0.999, double epsilon = 1e-8);
};

/// Bias-corrected ADAM update; returns the new parameters and advances
/// `state`.
AutoencoderParams adam_step(const AutoencoderParams& p, const AutoencoderParams& grad, AdamState& state);

struct TrainConfig {
  int epochs = 500;
  int batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  bool shuffle = true;
  double holdout_fraction = 0.1;

  void validate() const;
};

struct TrainLogEntry {
  int epoch = 0;
  double train_loss = 0.0;    ///< mean per-snapshot loss over the epoch
  double holdout_loss = 0.0;  ///< mean per-snapshot loss on the held-out split
};

struct TrainResult {
  AutoencoderParams params;  ///< parameters at the epoch with the lowest holdout loss
  std::vector<TrainLogEntry> log;
  int best_epoch = 0;
  double final_loss = 0.0;  ///< holdout loss at best_epoch
  std::size_t clipped_batches = 0;
};

using EpochCallback = std::function<void(const TrainLogEntry&)>;

/// Mini-batch ADAM on the summed loss. Deterministic given tcfg.seed.
TrainResult train(const dynamics::Trajectory& snapshots, const AEConfig& cfg, const TrainConfig& tcfg,
                  const dynamics::DifferentiableTendency& fom, const EpochCallback& on_epoch = {});

/// Mean squared reconstruction error |x - phi(theta(x))|^2 / n over columns.
double reconstruction_mse(const Matrix& x, const AutoencoderParams& p);

struct ParamsMetadata {
  AEConfig config;
  TrainConfig train_config;
  double final_loss = 0.0;
  int best_epoch = 0;
};

/// All eight arrays in one binary file plus a JSON sidecar with
/// {n, r, h, lambda1, lambda2, K, dt_loss, seed, train_config, final_loss}.
void save_params(const std::filesystem::path& path, const AutoencoderParams& p, const ParamsMetadata& meta);
AutoencoderParams load_params(const std::filesystem::path& path, ParamsMetadata* meta = nullptr);

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log);

}  // namespace mfda::ae
