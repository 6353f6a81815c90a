#pragma once

#include <cstdint>

namespace timnet {

/// Counter-based deterministic random stream. A draw is a pure function of
/// (seed, counter), so identical seed+counter always yield identical values,
/// and child streams split off with independent keys never collide with the
/// parent sequence.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix(seed_, counter_++); }

  /// Uniform double in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Derive an independent child stream. Splitting does not advance this
  /// stream's counter, so split order and draw order commute.
  RngStream split(std::uint64_t key) const { return RngStream(mix(seed_, 0x9e3779b97f4a7c15ULL ^ key)); }

private:
  // SplitMix64 finalizer over a combined (seed, counter) word.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t ctr) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (ctr + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace timnet
