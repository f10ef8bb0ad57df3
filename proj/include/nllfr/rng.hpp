#pragma once

#include <cstdint>
#include <random>

namespace nllfr {

/// Seedable generator whose output is identical on every platform.
///
/// The engine is std::mt19937_64, whose sequence is fixed by the standard.
/// Uniform and normal variates are derived here instead of through the
/// <random> distributions, which are implementation defined.
///
/// Substreams: `Rng::substream(seed, i)` seeds an independent engine with
/// splitmix64(seed + (i + 1) * 0x9E3779B97F4A7C15). Realization r of a
/// dataset uses substream r; other consumers pick disjoint indices.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  static Rng substream(std::uint64_t seed, std::uint64_t index) {
    return Rng(seed + (index + 1) * 0x9E3779B97F4A7C15ULL);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via the Box-Muller transform (one cached value).
  double normal();

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nllfr
