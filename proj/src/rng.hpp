#pragma once

#include <cmath>
#include <cstdint>

namespace derain {

// Deterministic 64-bit generator (xoshiro-style splitmix + mt-free core).
// All randomness in the project flows through this type so that results are
// reproducible across standard libraries; std::*_distribution is avoided on
// purpose because its output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // decorrelate small seeds
    next_u64();
    next_u64();
  }

  // Derives an independent stream, e.g. per video or per parameter tensor.
  Rng fork(std::uint64_t stream) const {
    return Rng(mix(state_ + 0x9e3779b97f4a7c15ULL * (stream + 1)));
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    return mix(z);
  }

  // uniform in [0, 1) with 24 bits of mantissa (exact float)
  float next_float() { return float(next_u64() >> 40) * 0x1.0p-24f; }

  // uniform in [0, 1) with 53 bits
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

  // integer in [0, n)
  std::uint64_t next_below(std::uint64_t n) {
    return n ? next_u64() % n : 0;
  }

  // standard normal via Box-Muller
  double next_normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Poisson sample; Knuth product method in chunks so large means do not
  // underflow, switching to a rounded normal above 2000.
  std::uint64_t next_poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean > 2000.0) {
      double x = mean + std::sqrt(mean) * next_normal();
      return x <= 0.0 ? 0 : std::uint64_t(std::llround(x));
    }
    std::uint64_t k = 0;
    double remaining = mean;
    double p = 1.0;
    while (true) {
      double chunk = remaining > 500.0 ? 500.0 : remaining;
      remaining -= chunk;
      double limit = std::exp(-chunk);
      while (p > limit) {
        p *= next_double();
        if (p <= limit) break;
        ++k;
      }
      if (remaining <= 0.0) break;
      p /= limit;
    }
    return k;
  }

  template <typename T>
  void shuffle(T* data, std::size_t n) {
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = next_below(i);
      T tmp = data[i - 1];
      data[i - 1] = data[j];
      data[j] = tmp;
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace derain
