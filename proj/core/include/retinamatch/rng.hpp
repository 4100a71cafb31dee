#pragma once

// Seeded random stream with hand-rolled draw functions. std::mt19937_64 is
// bit-exact everywhere, but the standard distributions are not; deriving
// uniforms and normals from the raw engine keeps byte-reproducibility
// independent of the standard library in use.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace retina {

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1) with 53 bits of entropy.
  double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), n >= 1, bias-free by rejection.
  uint64_t uniform_int(uint64_t n) {
    const uint64_t limit = ~uint64_t(0) - ~uint64_t(0) % n;
    uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller. Stateless: uses two fresh uniforms per
  /// draw so serialized engine state alone reproduces the stream.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  std::string save_state() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    if (!is) throw std::runtime_error("rng: malformed engine state");
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace retina
