// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical actor-critic heads. The anchor head picks a position in the
// current profile (masked to valid positions), the item head picks an item
// from the anchor's candidate pool, and the critic scores the state.
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "kgattack/autodiff.hpp"
#include "kgattack/kg_store.hpp"
#include "kgattack/parameters.hpp"
#include "kgattack/profile.hpp"
#include "kgattack/random.hpp"

namespace kgattack {

/// Logit added to invalid anchor positions.
inline constexpr double kMaskLogit = -1e9;

/// A categorical draw together with the distribution it came from.
struct PolicySample {
  Var log_probs;
  std::vector<double> probs;
  std::size_t index = 0;
  double log_prob = 0.0;
};

/// Draws from the distribution given by log-probabilities.
PolicySample sample_categorical(const Var& log_probs, Rng& rng);

/// softmax(W_A2 relu(W_A1 x) + m_t) over `max_len` positions with
/// m_t[i] = 0 for i < t, kMaskLogit otherwise. No bias terms.
class AnchorPolicy {
 public:
  AnchorPolicy(std::size_t state_dim, std::size_t hidden, std::size_t max_len, Rng& rng);

  /// Log-probabilities for a profile of length `profile_len` (1..max_len).
  Var log_probs(Tape& tape, const Var& state, std::size_t profile_len) const;
  PolicySample sample(Tape& tape, const Var& state, std::size_t profile_len, Rng& rng) const;

  std::size_t max_len() const { return max_len_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  std::size_t max_len_;
  ParameterSet params_{"anchor"};
  Parameter* hidden_weight_;
  Parameter* output_weight_;
};

/// x_hat = relu(W_I1 x); score_j = W_I2 [x_hat ; e_j]; softmax over the pool.
class ItemPolicy {
 public:
  ItemPolicy(std::size_t state_dim, std::size_t hidden, std::size_t item_dim, Rng& rng);

  Var log_probs(Tape& tape, const Var& state, std::span<const Var> item_vectors) const;
  PolicySample sample(Tape& tape, const Var& state, std::span<const Var> item_vectors,
                      Rng& rng) const;

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  std::size_t item_dim_;
  ParameterSet params_{"item"};
  Parameter* hidden_weight_;
  Parameter* score_weight_;
};

/// V(x) = w2 . relu(W1 x + b1) + b2
class Critic {
 public:
  Critic(std::size_t state_dim, std::size_t hidden, Rng& rng);

  Var value(Tape& tape, const Var& state) const;

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  ParameterSet params_{"critic"};
  Parameter *w1_, *b1_, *w2_, *b2_;
};

enum class AnchorSource { Policy, TargetForced };

struct AnchorChoice {
  std::size_t index = 0;
  AnchorSource source = AnchorSource::TargetForced;
  /// Present only for policy-sourced anchors.
  std::optional<double> log_prob;
  std::vector<double> probs;
};

/// With probability `anchor_ratio` the anchor comes from the anchor head;
/// otherwise the target item (position 0) is forced.
AnchorChoice select_anchor(Tape& tape, const AnchorPolicy& policy, const Var& state,
                           std::size_t profile_len, double anchor_ratio, Rng& rng);

struct FilteredPool {
  std::vector<ItemId> items;
  /// True when the KG pool was empty after filtering and `items` is every
  /// item outside the profile instead.
  bool fallback = false;
};

/// Removes profile items from a candidate pool; an empty result falls back
/// to all items not yet in the profile.
FilteredPool filter_pool(const std::optional<std::vector<ItemId>>& pool,
                         const FakeProfile& profile, std::size_t item_count);

}  // namespace kgattack
