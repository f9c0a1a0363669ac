#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace pathmamba {

/// SplitMix64 (Steele, Lea & Flood 2014). Every random draw in the library
/// goes through this generator so results are identical on every platform;
/// the standard <random> distributions are implementation-defined.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  /// Generator keyed by an ordered tuple of integers, e.g. (seed, index).
  static SplitMix64 keyed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
    SplitMix64 g(a);
    std::uint64_t s = g.next() ^ mix(b + 0x632BE59BD9B4E019ULL);
    s = mix(s ^ mix(c + 0x8CB92BA72F3D8DD7ULL));
    return SplitMix64(s);
  }

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] (inclusive).
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const { return state_; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
};

}  // namespace pathmamba
