#pragma once

#include <cstdint>

namespace tad {

// Splitmix-style mix of (seed, stream id): one independent, well-separated
// rng seed per purpose, so parallel consumers stay bit-deterministic.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace tad
