#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <type_traits>

#include "json.hpp"
#include "mfda/autoencoder.hpp"
#include "mfda/errors.hpp"
#include "mfda/io.hpp"
#include "mfda/rng.hpp"

namespace mfda::ae {

AdamState AdamState::fresh(const AutoencoderParams& like, double learning_rate, double beta1, double beta2,
                           double epsilon) {
  AdamState s;
  s.m = AutoencoderParams::zeros(like.n(), like.h(), like.r());
  s.v = s.m;
  s.learning_rate = learning_rate;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  return s;
}

AutoencoderParams adam_step(const AutoencoderParams& p, const AutoencoderParams& grad, AdamState& state) {
  if (state.m.parameter_count() != p.parameter_count() || grad.parameter_count() != p.parameter_count()) {
    throw InvalidArgument("adam_step: state or gradient inconsistent with parameters");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  AutoencoderParams out = p;
  zip_arrays(
      [&](auto& w, auto& m, auto& v, const auto& g) {
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
        w.array() -= state.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
      },
      out, state.m, state.v, grad);
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("TrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("TrainConfig: learning_rate must be positive");
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) throw InvalidArgument("TrainConfig: holdout_fraction in [0, 1)");
}

namespace {

Matrix gather(const Matrix& m, const std::vector<Eigen::Index>& idx, std::size_t begin, std::size_t end) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t i = begin; i < end; ++i) out.col(static_cast<Eigen::Index>(i - begin)) = m.col(idx[i]);
  return out;
}

std::vector<Matrix> gather_targets(const std::vector<Matrix>& targets, const std::vector<Eigen::Index>& idx,
                                   std::size_t begin, std::size_t end) {
  std::vector<Matrix> out;
  out.reserve(targets.size());
  for (const auto& t : targets) out.push_back(gather(t, idx, begin, end));
  return out;
}

}  // namespace

TrainResult train(const dynamics::Trajectory& snapshots, const AEConfig& cfg, const TrainConfig& tcfg,
                  const dynamics::DifferentiableTendency& fom, const EpochCallback& on_epoch) {
  cfg.validate();
  tcfg.validate();
  snapshots.validate();
  const Matrix& data = snapshots.states;
  if (data.rows() != cfg.n) throw InvalidArgument("train: snapshot dimension does not match AEConfig.n");
  const auto total = static_cast<std::size_t>(data.cols());
  if (total < static_cast<std::size_t>(tcfg.batch_size)) throw InvalidArgument("train: fewer snapshots than batch_size");

  std::vector<Eigen::Index> order(total);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  RandomStream split_rng(StreamKey{tcfg.seed, 0, 0, StreamRole::kTrainShuffle});
  std::shuffle(order.begin(), order.end(), split_rng.engine());
  const auto n_holdout = static_cast<std::size_t>(std::floor(tcfg.holdout_fraction * static_cast<double>(total)));
  std::vector<Eigen::Index> holdout(order.end() - static_cast<std::ptrdiff_t>(n_holdout), order.end());
  std::vector<Eigen::Index> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_holdout));
  std::sort(holdout.begin(), holdout.end());
  std::sort(train_idx.begin(), train_idx.end());

  const std::vector<Matrix> targets = trajectory_targets(data, cfg, fom.f);
  const Matrix holdout_x = gather(data, holdout, 0, holdout.size());
  const auto holdout_targets = gather_targets(targets, holdout, 0, holdout.size());

  TrainResult result;
  AutoencoderParams params = glorot_init(cfg, tcfg.seed);
  AdamState adam = AdamState::fresh(params, tcfg.learning_rate);
  double best = std::numeric_limits<double>::infinity();
  const auto batch = static_cast<std::size_t>(tcfg.batch_size);

  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    if (tcfg.shuffle) {
      RandomStream rng(StreamKey{tcfg.seed, 0, static_cast<std::uint64_t>(epoch), StreamRole::kTrainShuffle});
      std::shuffle(train_idx.begin(), train_idx.end(), rng.engine());
    }
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < train_idx.size(); begin += batch, ++batch_index) {
      const std::size_t end = std::min(train_idx.size(), begin + batch);
      const Matrix xb = gather(data, train_idx, begin, end);
      const auto tb = gather_targets(targets, train_idx, begin, end);
      LossGradient lg;
      try {
        lg = loss_gradient(xb, tb, params, cfg, fom);
      } catch (const TrainingDivergence& e) {
        throw TrainingDivergence("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_index),
                                 static_cast<std::size_t>(epoch), batch_index);
      }
      if (lg.loss.clipped) ++result.clipped_batches;
      epoch_loss += lg.loss.total();
      params = adam_step(params, lg.grad, adam);
    }

    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.train_loss = epoch_loss / static_cast<double>(train_idx.size());
    if (holdout.empty()) {
      entry.holdout_loss = entry.train_loss;
    } else {
      entry.holdout_loss = snapshot_loss(holdout_x, holdout_targets, params, cfg, fom.f).total() /
                           static_cast<double>(holdout.size());
    }
    if (!std::isfinite(entry.holdout_loss)) {
      throw TrainingDivergence("non-finite holdout loss at epoch " + std::to_string(epoch),
                               static_cast<std::size_t>(epoch), batch_index);
    }
    if (entry.holdout_loss < best) {
      best = entry.holdout_loss;
      result.params = params;
      result.best_epoch = epoch;
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  result.final_loss = best;
  return result;
}

namespace {

constexpr std::array<char, 8> kParamsMagic{'M', 'F', 'D', 'A', 'A', 'E', '0', '1'};

nlohmann::json config_json(const AEConfig& c) {
  return {{"n", c.n}, {"r", c.r}, {"h", c.h}, {"lambda1", c.lambda1}, {"lambda2", c.lambda2},
          {"K", c.K}, {"dt_loss", c.dt_loss}, {"clip_norm", c.clip_norm}};
}

nlohmann::json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},   {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
          {"seed", t.seed},       {"shuffle", t.shuffle},       {"holdout_fraction", t.holdout_fraction}};
}

}  // namespace

void save_params(const std::filesystem::path& path, const AutoencoderParams& p, const ParamsMetadata& meta) {
  p.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.write(kParamsMagic.data(), kParamsMagic.size());
  zip_arrays(
      [&](const auto& a) {
        const std::uint64_t rows = static_cast<std::uint64_t>(a.rows());
        const std::uint64_t cols = static_cast<std::uint64_t>(a.cols());
        out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
        out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
        out.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
      },
      p);
  if (!out) throw std::runtime_error("write failed: " + path.string());

  nlohmann::json side = config_json(meta.config);
  side["seed"] = meta.train_config.seed;
  side["train_config"] = train_json(meta.train_config);
  side["final_loss"] = meta.final_loss;
  side["best_epoch"] = meta.best_epoch;
  io::write_text(io::sidecar_path(path), side.dump(2) + "\n");
}

AutoencoderParams load_params(const std::filesystem::path& path, ParamsMetadata* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kParamsMagic) throw InvalidArgument("not an autoencoder parameter file: " + path.string());
  AutoencoderParams p;
  zip_arrays(
      [&](auto& a) {
        std::uint64_t rows = 0, cols = 0;
        in.read(reinterpret_cast<char*>(&rows), sizeof rows);
        in.read(reinterpret_cast<char*>(&cols), sizeof cols);
        using Array = std::decay_t<decltype(a)>;
        if (!in) throw InvalidArgument("corrupt parameter file: " + path.string());
        if constexpr (Array::ColsAtCompileTime == 1) {
          if (cols != 1) throw InvalidArgument("corrupt parameter file: " + path.string());
          a.resize(static_cast<Eigen::Index>(rows));
        } else {
          a.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        }
        in.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
      },
      p);
  if (!in) throw InvalidArgument("truncated parameter file: " + path.string());
  p.validate();

  if (meta != nullptr) {
    const auto side = nlohmann::json::parse(io::read_text(io::sidecar_path(path)));
    meta->config.n = side.at("n");
    meta->config.r = side.at("r");
    meta->config.h = side.at("h");
    meta->config.lambda1 = side.at("lambda1");
    meta->config.lambda2 = side.at("lambda2");
    meta->config.K = side.at("K");
    meta->config.dt_loss = side.at("dt_loss");
    meta->config.clip_norm = side.value("clip_norm", 1e6);
    const auto& t = side.at("train_config");
    meta->train_config.epochs = t.at("epochs");
    meta->train_config.batch_size = t.at("batch_size");
    meta->train_config.learning_rate = t.at("learning_rate");
    meta->train_config.seed = t.at("seed");
    meta->train_config.shuffle = t.at("shuffle");
    meta->train_config.holdout_fraction = t.at("holdout_fraction");
    meta->final_loss = side.at("final_loss");
    meta->best_epoch = side.value("best_epoch", 0);
  }
  return p;
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "epoch,train_loss,holdout_loss\n";
  for (const auto& e : log) ss << e.epoch << ',' << e.train_loss << ',' << e.holdout_loss << '\n';
  io::write_text(path, ss.str());
}

}  // namespace mfda::ae
