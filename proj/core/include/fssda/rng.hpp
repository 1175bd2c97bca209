#pragma once

#include <cstdint>
#include <random>

namespace fssda {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Named, independent streams derived from one experiment seed. Device streams
// use the device id as `stream`, so results do not depend on scheduling.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  return Rng(mix64(seed ^ mix64(stream)));
}

// Stream tags for the non-device consumers of randomness.
namespace streams {
inline constexpr std::uint64_t kDomains = 0x1000;
inline constexpr std::uint64_t kSplit = 0x2000;
inline constexpr std::uint64_t kMask = 0x3000;
inline constexpr std::uint64_t kPartition = 0x4000;
inline constexpr std::uint64_t kInit = 0x5000;
inline constexpr std::uint64_t kDevices = 0x10000;
}  // namespace streams

}  // namespace fssda
