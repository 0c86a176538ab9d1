#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>

#include "ace/config.hpp"

ACE_NAMESPACE_BEGIN

/// splitmix64 step; used to expand seeds and derive substreams.
std::uint64_t splitmix64(std::uint64_t& state);

/// xoshiro256** seeded through splitmix64.
///
/// The integer stream is fully specified and identical on every platform.
/// normal() goes through std::log / std::cos and is therefore only
/// reproducible for a fixed libm.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Independent generator for a (seed, path...) tuple. Two distinct paths
  /// under one seed give unrelated streams.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  /// Standard normal via Box-Muller.
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

ACE_NAMESPACE_END
