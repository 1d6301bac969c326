#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mpsguard {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Child seed for the task at `coords` under `base`. Used everywhere a
/// parallel task needs its own stream, so results never depend on scheduling.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = detail::splitmix64(base);
  for (std::uint64_t c : coords) h = detail::splitmix64(h ^ detail::splitmix64(c + 0x51ed270b27aa1c3dULL));
  return h;
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace mpsguard
