#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace somforge {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of the sub-stream addressed by `path` under `root`. Distinct paths
/// give statistically independent streams, so any sample can be regenerated
/// from (root, path) alone.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t h = mix64(root);
  for (std::uint64_t p : path) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(root, path));
}

/// Stream tags. Values are part of the reproducibility contract.
namespace stream {
inline constexpr std::uint64_t object = 1;
inline constexpr std::uint64_t kspace_noise = 2;
inline constexpr std::uint64_t init = 3;
inline constexpr std::uint64_t real_batch = 4;
inline constexpr std::uint64_t latent = 5;
inline constexpr std::uint64_t synth_noise = 6;
inline constexpr std::uint64_t sample = 7;
inline constexpr std::uint64_t trials = 8;
inline constexpr std::uint64_t control = 9;
}  // namespace stream

}  // namespace somforge
