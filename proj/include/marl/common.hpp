#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace marl {

// Derives an independent seed for a named stream (worker rng, env rng, ...)
// from the run seed. splitmix64 finalizer; stable across platforms.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  uint64_t z = base + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Uniform float in [0, 1) built from the top 24 bits of one mt19937 draw.
// uniform_real_distribution is implementation-defined; this is not.
inline float uniform01(std::mt19937& rng) {
  return static_cast<float>(rng() >> 8) * (1.0f / 16777216.0f);
}

// Uniform integer in [0, n) without distribution-object variance across
// standard libraries. n must be >= 1.
inline int uniform_below(std::mt19937& rng, int n) {
  return static_cast<int>(static_cast<uint64_t>(rng()) * static_cast<uint32_t>(n) >> 32);
}

inline bool is_finite(float v) { return std::isfinite(v); }

// Shortest round-trip-safe text for a float (9 significant digits).
std::string fmt_float(double v);

}  // namespace marl
