#pragma once

// Reproducible random numbers.
//
// The bit generator is std::mt19937_64, whose output sequence is fixed by the
// C++ standard, so a seed yields the same stream on every conforming
// toolchain. Uniforms take the top 53 bits of each draw and are shifted by
// half an ulp into the open interval (0, 1). Normals come from the basic
// Box-Muller transform; both members of each pair are used, cosine branch
// first. std::normal_distribution is avoided because its algorithm is
// implementation-defined.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace scalevec {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace scalevec
