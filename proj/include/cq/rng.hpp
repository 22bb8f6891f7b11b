// Counter-based random number generation for trajectory ensembles.
//
// Every variate is a pure function of (seed, stream, step, draw), so
// trajectories can be generated in any order, on any number of threads,
// and still reproduce bit-for-bit.
#pragma once

#include <cmath>
#include <cstdint>

#include "cq/common.hpp"

namespace cq {

namespace detail {

// SplitMix64 output function: a strong 64-bit mixer.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Absorb four words into one well-mixed counter value.
inline std::uint64_t mix4(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                          std::uint64_t d) {
  std::uint64_t h = splitmix64(a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  h = splitmix64(h ^ d);
  return h;
}

}  // namespace detail

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  // Uniform double in (0, 1]. The +1 keeps log() finite downstream.
  double uniform(std::uint64_t step, std::uint64_t draw) const {
    std::uint64_t h = detail::mix4(seed_, stream_, step, draw);
    return (static_cast<double>(h >> 11) + 1.0) * 0x1.0p-53;
  }

  // Standard normal variate via Box-Muller on two independent uniforms.
  // Draw indices are consumed in pairs internally (2*draw, 2*draw + 1),
  // so callers may use consecutive draw values freely.
  double normal(std::uint64_t step, std::uint64_t draw) const {
    double u1 = uniform(step, 2 * draw);
    double u2 = uniform(step, 2 * draw + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
};

}  // namespace cq
