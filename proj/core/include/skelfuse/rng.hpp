#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "skelfuse/tensor.hpp"

namespace skelfuse {

/// Counter-based generator: draw k is splitmix64(seed + k * golden). The whole state is
/// (seed, counter), so streams are reproducible on any platform and trivially serializable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 24 random mantissa bits.
  float uniform();
  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform_double();
  /// Standard normal via Box-Muller (one value per call, two draws consumed).
  double normal();
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Independent child stream; does not advance this generator.
  Rng fork(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

Tensor uniform_tensor(Rng& rng, Shape shape, float lo, float hi);
Tensor normal_tensor(Rng& rng, Shape shape, float stddev);

}  // namespace skelfuse
