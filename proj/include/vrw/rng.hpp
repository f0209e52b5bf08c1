#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace vrw {

// Seeded generator whose draws depend only on the mt19937_64 output sequence,
// which the standard fixes. The std distributions are implementation-defined,
// so stored scenes would not regenerate bit-identically across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). Slight modulo bias is irrelevant for n << 2^64.
  int index(int n) { return static_cast<int>(engine_() % std::uint64_t(n)); }
  bool coin() { return (engine_() >> 63) != 0; }

  // Box-Muller, one value per call.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace vrw
