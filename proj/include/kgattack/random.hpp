// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace kgattack {

/// Seeded pseudo-random source used everywhere randomness is needed.
/// Streams derived with `derive` are independent of call order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Seed from a list of integers, e.g. (seed, episode, trajectory).
  static Rng derive(std::initializer_list<std::uint64_t> parts);

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  bool coin(double p_true) { return uniform() < p_true; }
  double normal();

  /// Draws `count` distinct indices from [0, n) preserving draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count);

  /// Categorical draw from (unnormalized, nonnegative) weights.
  std::size_t categorical(std::span<const double> weights);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer; used for seed derivation and hashing.
std::uint64_t mix64(std::uint64_t x);

}  // namespace kgattack
