#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace bslb {

using Rng = std::mt19937_64;

/// Mixes a global seed with a stream name so that independent consumers
/// (initialization, shuffling, attack starts, samplers) never share draws.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  // FNV-1a over the name, then a splitmix64 finalizer over the combination.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : stream) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (h | 1ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng make_stream(std::uint64_t seed, std::string_view stream) {
  return Rng(derive_seed(seed, stream));
}

}  // namespace bslb
