#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>

#include "satt/tensor.hpp"

namespace satt {

// Counter-based generator: the k-th draw (k = 0, 1, ...) of a stream with
// key `seed` is splitmix64_mix(seed + (k + 1) * 0x9E3779B97F4A7C15).
// Outputs depend only on (seed, k), so a stream can be reproduced in any
// language from the two integers alone. split(id) derives an independent
// key as mix(seed ^ mix(id + 0xD1B54A32D192ED03)).
//
// uniform01() keeps the top 53 bits: (u >> 11) * 2^-53.
// normal() is Box-Muller over two consecutive uniforms, cosine branch only.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    ++counter_;
    return mix(seed_ + counter_ * kGolden);
  }

  Rng split(std::uint64_t stream) const { return Rng(mix(seed_ ^ mix(stream + kSplitSalt))); }

  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, bound); bound must be positive.
  std::uint64_t below(std::uint64_t bound) { return next_u64() % bound; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform01();
    const double u2 = uniform01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <std::floating_point T>
  void fill_uniform(Tensor4<T>& t, double lo, double hi) {
    for (auto& v : t.data()) v = static_cast<T>(uniform(lo, hi));
  }

  template <std::floating_point T>
  void fill_normal(Tensor4<T>& t, double mean, double stddev) {
    for (auto& v : t.data()) v = static_cast<T>(normal(mean, stddev));
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kSplitSalt = 0xD1B54A32D192ED03ULL;

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

template <std::floating_point T>
Tensor4<T> random_normal(Shape4 shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
  Tensor4<T> t(shape);
  rng.fill_normal(t, mean, stddev);
  return t;
}

}  // namespace satt
