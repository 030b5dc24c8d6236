#include "mfda/rng.hpp"

#include <array>

namespace mfda {
namespace {

std::mt19937_64 seeded_engine(const StreamKey& key) {
  const auto split = [](std::uint64_t v) {
    return std::array<std::uint32_t, 2>{static_cast<std::uint32_t>(v & 0xffffffffu),
                                        static_cast<std::uint32_t>(v >> 32)};
  };
  const auto s = split(key.seed);
  const auto r = split(key.realization);
  const auto t = split(key.step);
  const auto k = split(static_cast<std::uint64_t>(key.role));
  std::seed_seq seq{s[0], s[1], r[0], r[1], t[0], t[1], k[0], k[1]};
  return std::mt19937_64(seq);
}

}  // namespace

RandomStream::RandomStream(const StreamKey& key) : engine_(seeded_engine(key)) {}

Matrix RandomStream::standard_normal(Eigen::Index rows, Eigen::Index cols) {
  Matrix out(rows, cols);
  // column-major fill: member e's draws are contiguous
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = normal_(engine_);
  }
  return out;
}

double RandomStream::standard_normal() { return normal_(engine_); }

double RandomStream::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine_);
}

}  // namespace mfda
