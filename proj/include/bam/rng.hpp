#pragma once
// Deterministic RNG helpers. std::mt19937_64 is seeded explicitly everywhere;
// distribution shaping is done by hand because std::*_distribution output is
// implementation-defined and runs must be reproducible bit-for-bit.

#include <cmath>
#include <cstdint>
#include <random>

namespace bam {

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // uniform integer in [0, n); modulo bias is negligible for n << 2^64
  uint64_t below(uint64_t n) { return eng_() % n; }

  int32_t range_i32(int32_t lo, int32_t hi_exclusive) {
    return lo + static_cast<int32_t>(below(static_cast<uint64_t>(hi_exclusive - lo)));
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // standard normal, Box-Muller with cached spare
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64-style mixing, used to derive independent seeds for sub-streams
inline uint64_t split_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace bam
