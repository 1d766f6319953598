#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace clf {

namespace detail {

// splitmix64, used to derive independent streams from one seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Deterministic RNG. All draws are derived from mt19937_64 output words so
// that sequences are identical across platforms for the same seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Modulo bias is negligible for n << 2^64 and keeps the draw count fixed.
    return next_u64() % n;
  }

  // Standard normal via Box-Muller (cosine branch only, fixed draw count).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // Independent stream keyed by an integer tag.
  Rng fork(std::uint64_t tag) const {
    return Rng(detail::mix64(seed_state() ^ detail::mix64(tag)));
  }

 private:
  std::uint64_t seed_state() const {
    // The engine itself is not observable without advancing it; keep a copy.
    auto copy = engine_;
    return copy();
  }

  std::mt19937_64 engine_;
};

}  // namespace clf
