#pragma once

#include <cstdint>
#include <random>

namespace cenkf {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic child seed for (parent, stream, index). Results never depend
/// on the order in which children are drawn.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream,
                                    std::uint64_t index = 0) noexcept {
  return splitmix64(splitmix64(splitmix64(parent) ^ stream) + index);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace cenkf
