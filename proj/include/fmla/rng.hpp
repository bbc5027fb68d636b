#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fmla {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a run seed and a tag path,
// e.g. mix_seed({run_seed, kMaskStream, step, pass, layer, head}).
inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x853c49e6748fea9bull;
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

inline Rng make_rng(std::initializer_list<std::uint64_t> parts) {
  return Rng(mix_seed(parts));
}

// Stream tags. Keeping them distinct means reordering one consumer
// never perturbs another's draws.
inline constexpr std::uint64_t kInitStream = 0x01;
inline constexpr std::uint64_t kShuffleStream = 0x02;
inline constexpr std::uint64_t kMaskStream = 0x03;
inline constexpr std::uint64_t kDataStream = 0x04;

}  // namespace fmla
