#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace blockplan {

/// Counter-based SplitMix64 stream.
///
/// Output i of a stream with key K is mix64(K + (i + 1) * 0x9E3779B97F4A7C15),
/// where mix64 is the SplitMix64 finalizer. The whole generator state is the
/// pair (key, counter), so any stream can be checkpointed, resumed, or split
/// into independent child streams without touching the parent.
///
/// Derived quantities are defined bit-exactly so every platform agrees:
///   uniform01()      (x >> 11) * 2^-53
///   below(n)         rejection on x < (2^64 - n) mod n, then x mod n
///   normal()         Box-Muller on two uniform01() draws, cosine branch only
class SplitMix64 {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  constexpr SplitMix64() = default;
  constexpr explicit SplitMix64(std::uint64_t key, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  static constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Stream keyed by a user seed; the seed is mixed so nearby seeds decorrelate.
  static constexpr SplitMix64 from_seed(std::uint64_t seed) {
    return SplitMix64(mix64(seed ^ 0x6A09E667F3BCC909ULL));
  }

  constexpr std::uint64_t next() {
    ++counter_;
    return mix64(key_ + counter_ * kGamma);
  }

  /// Independent child stream. Does not advance this stream.
  constexpr SplitMix64 split(std::uint64_t tag) const {
    return SplitMix64(mix64(key_ ^ mix64(tag + 0xBB67AE8584CAA73BULL)));
  }

  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t x = next();
      if (x >= threshold) return x % n;
    }
  }

  bool bernoulli(double p) { return uniform01() < p; }

  double normal() {
    double u1 = uniform01();
    const double u2 = uniform01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  constexpr std::uint64_t key() const { return key_; }
  constexpr std::uint64_t counter() const { return counter_; }

  friend constexpr bool operator==(const SplitMix64&, const SplitMix64&) = default;

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace blockplan
