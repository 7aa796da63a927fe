#pragma once

// Seeded randomness shared by the traffic forge and the trainer.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. Range reduction is done here rather than through <random>
// distributions, whose algorithms are implementation-defined, so every draw
// is identical across platforms and standard libraries.
//
// Independent streams (one per flow, one per generator) are seeded with the
// SplitMix64 finalizer of (seed, stream id):
//   z  = seed + 0x9E3779B97F4A7C15 * (stream + 1)
//   z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z  = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   z ^= z >> 31

#include <cstdint>
#include <random>

namespace sentinel {

inline constexpr std::uint64_t mix_stream(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
    return Rng(mix_stream(seed, stream_id));
  }

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, n) by rejection; n must be nonzero.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }

  // Uniform in [lo, hi], inclusive.
  std::uint64_t between(std::uint64_t lo, std::uint64_t hi) { return lo + below(hi - lo + 1); }

  // Uniform in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sentinel
