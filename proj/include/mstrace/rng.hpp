#pragma once

#include <cstdint>
#include <random>

namespace mstrace {

using Rng = std::mt19937_64;

/// Purpose tags keep streams for different consumers disjoint.
enum class StreamTag : std::uint64_t {
  gibbs = 1,
  metropolis = 2,
  simulation = 3,
  observation_mask = 4,
  holdout = 5,
  test = 99,
};

namespace detail {
// splitmix64 finaliser, used only to hash stream coordinates into a seed.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Independent stream for (seed, tag, a, b). Results never depend on the
/// order in which streams are created, so work can be split across threads.
inline Rng derive_stream(std::uint64_t seed, StreamTag tag, std::uint64_t a = 0,
                         std::uint64_t b = 0) {
  std::uint64_t h = detail::mix64(seed);
  h = detail::mix64(h ^ static_cast<std::uint64_t>(tag));
  h = detail::mix64(h ^ a);
  h = detail::mix64(h ^ b);
  return Rng(h);
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace mstrace
