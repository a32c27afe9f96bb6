#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace fedet {

// splitmix64, used to derive independent stream seeds from one master seed.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag));
}

inline uint64_t derive_seed(uint64_t seed, uint64_t tag_a, uint64_t tag_b) {
  return derive_seed(derive_seed(seed, tag_a), tag_b);
}

// Deterministic random source. mt19937_64 output is specified bit-exactly by
// the standard; doubles are derived from the raw bits directly instead of
// going through std::uniform_real_distribution, whose rounding is
// implementation-defined.
class Rng {
public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1), 53 bits of precision
  double next_double() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Box-Muller; one value per call, the paired value is discarded so the
  // stream position is a simple function of the call count.
  double gaussian(double mean = 0.0, double stddev = 1.0) {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // uniform integer in [0, n)
  uint64_t next_below(uint64_t n) {
    // rejection-free modulo is fine here; streams are not adversarial
    return n == 0 ? 0 : gen_() % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  std::mt19937_64 gen_;
};

}  // namespace fedet
