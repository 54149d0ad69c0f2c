#pragma once

// Deterministic random streams. Every replicate of every simulation owns an
// engine keyed by (seed, stream id, replicate index), so results do not
// depend on evaluation order or thread count. Variate generation is done
// here rather than with <random> distributions so draws are identical
// across standard library implementations.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace qsign {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x51a3c0de5eedULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key) : engine_(key) {}
  RandomStream(std::initializer_list<std::uint64_t> parts) : engine_(stream_key(parts)) {}

  std::uint64_t bits() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1).
  double open_uniform() {
    double u;
    do u = uniform(); while (u == 0.0);
    return u;
  }

  /// Standard normal, Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  /// Gamma(shape, 1), Marsaglia-Tsang.
  double gamma(double shape) {
    if (shape < 1.0) {
      const double u = open_uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = open_uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  /// Student t with df degrees of freedom.
  double student(double df) {
    const double z = normal();
    const double chi2 = 2.0 * gamma(0.5 * df);
    return z / std::sqrt(chi2 / df);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace qsign
