#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace sagate {

/// Deterministic 64-bit splitmix generator. All randomness in the library
/// flows through this type so that a (seed, index) pair reproduces the same
/// stream on every platform: state updates and the uniform mapping use only
/// integer arithmetic and exact IEEE scaling.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 bits of mantissa; exact scaling, no libm.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [0, n), n > 0.
  uint64_t below(uint64_t n) { return next_u64() % n; }

  int64_t range(int64_t lo, int64_t hi_inclusive) {
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; --i) {
      uint64_t j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  uint64_t state_;
};

/// Stable stream derivation: child = hash(seed, index). Used to give every
/// sample / parameter / worker its own independent generator.
inline uint64_t derive_seed(uint64_t seed, uint64_t index) {
  SplitMix64 g(seed ^ (0x9E3779B97F4A7C15ull + index * 0xD1B54A32D192ED03ull));
  return g.next_u64();
}

}  // namespace sagate
