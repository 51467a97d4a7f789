#pragma once

#include <cstdint>

namespace dispkit {

/// splitmix64 generator. Small, fast, and bit-reproducible on every platform,
/// which the data pipeline and weight init rely on for replayable runs.
class SplitMix64 {
public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next() % n; }

private:
  std::uint64_t state_;
};

/// Stateless mix of up to four words into one, for keyed sub-streams
/// (texture lattices, per-epoch shuffles, per-sample augmentation draws).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                              std::uint64_t d = 0) {
  SplitMix64 g(a);
  std::uint64_t s = g.next();
  s ^= SplitMix64(b ^ 0x517cc1b727220a95ULL).next();
  s = SplitMix64(s).next();
  s ^= SplitMix64(c ^ 0x2545f4914f6cdd1dULL).next();
  s = SplitMix64(s).next();
  s ^= SplitMix64(d ^ 0x9e3779b97f4a7c15ULL).next();
  return SplitMix64(s).next();
}

/// Hash a keyed lattice point to a uniform double in [0, 1).
inline double hash_uniform(std::uint64_t key, std::int64_t i, std::int64_t j, std::int64_t k) {
  std::uint64_t s = mix_seed(key, static_cast<std::uint64_t>(i) * 0x9e3779b97f4a7c15ULL + 0x1234,
                             static_cast<std::uint64_t>(j) * 0xc2b2ae3d27d4eb4fULL + 0x5678,
                             static_cast<std::uint64_t>(k) + 0x9abc);
  return static_cast<double>(s >> 11) * 0x1.0p-53;
}

}  // namespace dispkit
