#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace raincast {

// splitmix64 finalizer; mixes seed material into well-separated streams.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives a stream seed from a master seed and a list of integer tags
// (stage, epoch, step, sample index, ...).  Any generator seeded through
// here is independent of iteration order, which keeps data generation and
// training reproducible and resumable without serializing RNG state.
template <class... Tags>
constexpr std::uint64_t seed_stream(std::uint64_t seed, Tags... tags) {
  std::uint64_t h = splitmix64(seed ^ 0x6f7261636c65ULL);
  ((h = splitmix64(h ^ static_cast<std::uint64_t>(tags))), ...);
  return h;
}

template <class... Tags>
std::mt19937_64 make_rng(std::uint64_t seed, Tags... tags) {
  return std::mt19937_64(seed_stream(seed, tags...));
}

// Uniform in [0, 1) with 53-bit resolution; independent of library
// distribution implementations.
inline double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

// Uniform in (0, 1]; safe as a log() argument.
inline double uniform01_open(std::mt19937_64& g) {
  return static_cast<double>((g() >> 11) + 1) * 0x1.0p-53;
}

// Uniform in [lo, hi).
inline double uniform(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * uniform01(g);
}

// Standard normal via Box-Muller; consumes two uniforms per draw.
inline double normal01(std::mt19937_64& g) {
  const double u = uniform01_open(g);
  const double v = uniform01(g);
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
}

// Integer in [0, n); n must be positive.  Uses the 53-bit uniform so the
// result does not depend on library-specific rejection strategies.
inline std::uint64_t uniform_index(std::mt19937_64& g, std::uint64_t n) {
  return static_cast<std::uint64_t>(uniform01(g) * static_cast<double>(n));
}

}  // namespace raincast
