#pragma once

#include <cmath>
#include <cstdint>

namespace marknmt {

// Counter-based random numbers. Every stochastic draw in the toolkit is a pure
// function of (seed, purpose, counters), so reproducing a run never depends on
// hidden generator state and resumed runs consume exactly the same values.
namespace rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(a) ^ (0x9e3779b97f4a7c15ULL + b));
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix(mix(a, b), c);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                         std::uint64_t d) {
  return mix(mix(a, b, c), d);
}

// Uniform in [0, 1).
inline double uniform(std::uint64_t key) {
  return static_cast<double>(key >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller on two decorrelated substreams of `key`.
inline double normal(std::uint64_t key) {
  const double u1 = uniform(mix(key, 0x5bf0'3635'dcf6'06e1ULL));
  const double u2 = uniform(mix(key, 0x2545'f491'4f6c'dd1dULL));
  const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

// Integer in [0, n).
inline std::uint64_t below(std::uint64_t key, std::uint64_t n) {
  return key % n;
}

// Small stateful stream for places that need a sequence of draws; the state is
// just (key, counter), so it serializes trivially.
class Stream {
 public:
  explicit Stream(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64() { return mix(key_, counter_++); }
  double next_uniform() { return uniform(next_u64()); }
  double next_normal() { return normal(next_u64()); }
  std::uint64_t next_below(std::uint64_t n) { return below(next_u64(), n); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace rng
}  // namespace marknmt
