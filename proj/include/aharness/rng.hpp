#pragma once

#include <cstdint>
#include <string_view>

namespace aharness {

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);
/// FNV-1a over the bytes of a string; stable across platforms.
std::uint64_t fnv1a(std::string_view text);
std::uint64_t combine_keys(std::uint64_t a, std::uint64_t b);

/// Counter-based stream: draw k of stream (seed, skill, step) is a pure
/// function of (seed, skill, step, k), so any draw can be replayed in
/// isolation and the external skill server can reproduce it bit-exactly.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t step);
  CounterRng(std::uint64_t seed, std::string_view stream, std::uint64_t step);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (two uniforms per draw, no caching).
  double normal();
  int uniform_int(int lo, int hi_inclusive);
  bool bernoulli(double p);

  [[nodiscard]] std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace aharness
