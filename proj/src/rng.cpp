#include "aharness/rng.hpp"

#include <cmath>
#include <numbers>

namespace aharness {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t combine_keys(std::uint64_t a, std::uint64_t b) { return mix64(a ^ mix64(b)); }

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t step)
    : key_(combine_keys(combine_keys(seed, stream), step)) {}

CounterRng::CounterRng(std::uint64_t seed, std::string_view stream, std::uint64_t step)
    : CounterRng(seed, fnv1a(stream), step) {}

std::uint64_t CounterRng::next_u64() { return mix64(key_ ^ mix64(counter_++)); }

double CounterRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double CounterRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double CounterRng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int CounterRng::uniform_int(int lo, int hi_inclusive) {
  const auto span = static_cast<std::uint64_t>(hi_inclusive - lo + 1);
  return lo + static_cast<int>(next_u64() % span);
}

bool CounterRng::bernoulli(double p) { return uniform() < p; }

}  // namespace aharness
