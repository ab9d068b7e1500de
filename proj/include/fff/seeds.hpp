#pragma once

#include <cstdint>

namespace fff {

/// Independent random streams derived from one run seed.
enum class SeedStream : std::uint64_t { Init = 1, TrainData = 2, EvalData = 3, Analysis = 4 };

/// splitmix64 of the seed mixed with the stream id.
constexpr std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(stream) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace fff
