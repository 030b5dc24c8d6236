#pragma once

#include <cstdint>
#include <random>

#include "mfda/linalg.hpp"

namespace mfda {

/// What a random draw is used for. Each role gets its own substream so
/// that, e.g., principal and ancillary perturbed observations are
/// independent, and truth/observation noise does not depend on which
/// filter consumes it.
enum class StreamRole : std::uint64_t {
  kSnapshots = 1,
  kTruth = 2,
  kObservationNoise = 3,
  kInitialPrincipal = 4,
  kInitialAncillary = 5,
  kPerturbPrincipal = 6,
  kPerturbAncillary = 7,
  kTrainInit = 8,
  kTrainShuffle = 9,
  kTest = 10,
};

struct StreamKey {
  std::uint64_t seed = 0;
  std::uint64_t realization = 0;
  std::uint64_t step = 0;
  StreamRole role = StreamRole::kTest;
};

/// Deterministic generator addressed by a (seed, realization, step, role)
/// key. Two streams with the same key produce identical draws.
class RandomStream {
 public:
  explicit RandomStream(const StreamKey& key);
  explicit RandomStream(std::uint64_t seed, StreamRole role = StreamRole::kTest)
      : RandomStream(StreamKey{seed, 0, 0, role}) {}

  Matrix standard_normal(Eigen::Index rows, Eigen::Index cols);
  double standard_normal();
  double uniform(double lo, double hi);

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace mfda
