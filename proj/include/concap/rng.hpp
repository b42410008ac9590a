#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace concap {

// Deterministic RNG. mt19937_64 is bit-exact across platforms; the
// derived draws below are written out explicitly (std::*_distribution is
// implementation-defined) so seeded runs reproduce byte-for-byte.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; draws two uniforms per call.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    return mean + stddev * z;
  }

  // Inclusive range. Modulo bias is irrelevant at the spans used here.
  int uniform_int(int lo, int hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(eng_() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(eng_() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace concap
