#pragma once

// Seed derivation and small sampling helpers.
//
// A master seed expands into independent streams with stream_seed(seed, id):
// SplitMix64 applied to seed ^ golden-ratio-scaled id. Worker w of a job uses
// stream id w, so results do not depend on how many workers run.

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace rat {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ (stream * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL));
}

/// Uniform integer in [0, n) by rejection; identical across standard libraries.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

/// Fisher-Yates shuffle driven by uniform_index.
template <typename T>
void shuffle_indices(std::span<T> v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

template <typename T>
void shuffle_indices(std::vector<T>& v, std::mt19937_64& rng) {
  shuffle_indices(std::span<T>(v), rng);
}

}  // namespace rat
