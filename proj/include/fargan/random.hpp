#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace fargan {

using Rng = std::mt19937_64;

/// Independent stream for (seed, stream) so per-step generators need no saved state.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

template <typename T>
std::vector<T> normal_vector(Rng& rng, std::size_t count, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> out(count);
  for (auto& v : out) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
std::vector<T> uniform_vector(Rng& rng, std::size_t count, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> out(count);
  for (auto& v : out) v = static_cast<T>(dist(rng));
  return out;
}

}  // namespace fargan
