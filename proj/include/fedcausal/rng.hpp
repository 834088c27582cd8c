#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedcausal {

/// One SplitMix64 step; a bijective mixer of 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Child seed for a stream path under a master seed, e.g.
/// derive_seed(master, {replicate}) or derive_seed(master, {replicate, b}).
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(master);
  for (std::uint64_t p : path) s = splitmix64(s ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

using Engine = std::mt19937_64;

}  // namespace fedcausal
