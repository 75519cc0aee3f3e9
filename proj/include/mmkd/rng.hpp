#pragma once

#include <cstdint>
#include <random>

namespace mmkd {

/// Independent, reproducible generator for one use of a run seed. Distinct
/// `stream` values give unrelated sequences for the same seed.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

// Stream ids used across the library.
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kData = 2;
inline constexpr std::uint64_t kSplit = 3;
inline constexpr std::uint64_t kShuffle = 4;
inline constexpr std::uint64_t kStudentInit = 5;
inline constexpr std::uint64_t kGradcheck = 6;
}  // namespace streams

}  // namespace mmkd
