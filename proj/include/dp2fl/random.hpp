#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dp2fl {

using Rng = std::mt19937_64;

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a path of tags
/// (client id, round, purpose). Order of tags matters.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = mix64(base);
  for (auto t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

// Stream purposes used with derive_seed.
namespace stream {
inline constexpr std::uint64_t kBackbone = 1;
inline constexpr std::uint64_t kTask = 2;
inline constexpr std::uint64_t kClientData = 3;
inline constexpr std::uint64_t kPromptInit = 4;
inline constexpr std::uint64_t kShuffle = 5;
}  // namespace stream

}  // namespace dp2fl
