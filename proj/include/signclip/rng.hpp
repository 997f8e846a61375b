#pragma once

#include <cstdint>
#include <random>

#include "signclip/tensor.hpp"

namespace signclip {

/// SplitMix64 finaliser; used to derive independent 64-bit stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed for stream `stream` of master seed `seed`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

/// Portable random source: std::mt19937_64 (fully specified by the standard)
/// with hand-written distributions, so draws are identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t stream) : engine_(derive_seed(seed, stream)) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }
  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Matrix normal_matrix(Index rows, Index cols, double stddev);
  Matrix uniform_matrix(Index rows, Index cols, double lo, double hi);

 private:
  std::mt19937_64 engine_;
};

}  // namespace signclip
