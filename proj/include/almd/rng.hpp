#pragma once

#include <cstdint>
#include <random>

namespace almd {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream-splitting rule: substream k of seed s is a Mersenne Twister seeded
/// with mix64(mix64(s) ^ mix64(k + 1)). Each trajectory, oracle query and
/// training run draws from its own substream, so results do not depend on
/// scheduling order.
constexpr std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix64(mix64(seed) ^ mix64(stream + 1));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  return Rng(substream_seed(seed, stream));
}

}  // namespace almd
