#pragma once

#include <bit>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace powerlik {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Child seed for a named stream, e.g. derive_seed(master, {replicate, 7}).
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(master);
  for (auto p : path) s = splitmix64(s ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

// Seed tied to the value of eta, so a refined grid reuses the draws of the
// points it shares with a coarser one.
inline std::uint64_t eta_seed(std::uint64_t master, double eta) {
  return derive_seed(master, {0x65746121ULL, std::bit_cast<std::uint64_t>(eta + 0.0)});
}

}  // namespace powerlik
