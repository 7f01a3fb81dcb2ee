#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "patchdet/errors.hpp"

namespace patchdet {

/// Counter-style PRNG (splitmix64). One 64-bit word of state makes streams
/// trivially serializable into checkpoints and bit-stable across platforms,
/// unlike the unspecified std::uniform_* distributions.
///
/// All randomness in the toolkit flows from one root seed through named
/// substreams (see from_root), so e.g. augmentation draws can be varied
/// independently of parameter initialization.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  /// Derive the substream `name` of a root seed. Distinct names give
  /// decorrelated streams; the same (root, name) pair always gives the
  /// same stream.
  static Rng from_root(std::uint64_t root_seed, std::string_view name) {
    // FNV-1a over the stream name, folded into the root seed.
    std::uint64_t h = 1469598103934665603ull;
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    Rng rng(root_seed ^ h);
    rng.next_u64(); // decouple nearby roots
    return rng;
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [a, b).
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  /// Uniform double in the open interval (a, b).
  double uniform_open(double a, double b) {
    for (;;) {
      double u = uniform();
      if (u > 0.0) {
        double v = a + (b - a) * u;
        if (v > a && v < b) return v;
      }
    }
  }

  /// Uniform integer in [lo, hi], both ends inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw ArgumentError("uniform_int: empty range");
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next_u64()); // full 64-bit range
    // Rejection sampling for an unbiased draw.
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller. No cached second value, so the
  /// stream state stays a single word.
  double normal() {
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

} // namespace patchdet
