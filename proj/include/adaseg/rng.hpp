#pragma once

#include <cstdint>
#include <cmath>

namespace adaseg {

// Deterministic splitmix64 stream. Hand-rolled so that generated datasets and
// initializations do not depend on the standard library's distribution
// implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed + kGamma) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += kGamma);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  // Independent stream derived from this seed; stable under call order.
  Rng fork(std::uint64_t stream) const {
    Rng child(state_ ^ (stream * 0xd6e8feb86659fd93ULL + 0x2545f4914f6cdd1dULL));
    return child;
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace adaseg
