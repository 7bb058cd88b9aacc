#pragma once

// SplitMix64 (Steele, Lea & Flood 2014). A 64-bit counter-based generator:
// output n is mix64(seed + (n + 1) * 0x9E3779B97F4A7C15). It has no
// platform-dependent state, so every stream is bit-stable across machines.
// All sampling in this library draws from it; the std <random> distributions
// are avoided because their outputs are implementation-defined.

#include <cstdint>

namespace mtkit {

constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seed of the stream used for item `index` of a run seeded with `global_seed`.
/// stream_seed(g, i) = mix64(g ^ mix64(i + 1)). Independent of batch layout or
/// thread count.
constexpr std::uint64_t stream_seed(std::uint64_t global_seed, std::uint64_t index) {
  return mix64(global_seed ^ mix64(index + 1));
}

class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t next() {
    state_ += kGoldenGamma;
    return mix64(state_);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  constexpr double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound) by rejection; bound must be > 0.
  constexpr std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace mtkit
