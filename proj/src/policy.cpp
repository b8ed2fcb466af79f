// SPDX-License-Identifier: Apache-2.0
#include "kgattack/policy.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace kgattack {

PolicySample sample_categorical(const Var& log_probs, Rng& rng) {
  PolicySample s;
  s.log_probs = log_probs;
  const Matrix& lp = log_probs.value();
  s.probs.resize(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) s.probs[i] = std::exp(lp[i]);
  s.index = rng.categorical(s.probs);
  s.log_prob = lp[s.index];
  return s;
}

// ---- anchor head ------------------------------------------------------------

AnchorPolicy::AnchorPolicy(std::size_t state_dim, std::size_t hidden, std::size_t max_len,
                           Rng& rng)
    : max_len_(max_len) {
  if (max_len == 0) throw std::invalid_argument("anchor policy: max_len must be >= 1");
  hidden_weight_ = &params_.add_glorot("W_A1", hidden, state_dim, rng);
  output_weight_ = &params_.add_glorot("W_A2", max_len, hidden, rng);
}

Var AnchorPolicy::log_probs(Tape& tape, const Var& state, std::size_t profile_len) const {
  if (profile_len == 0 || profile_len > max_len_) {
    throw std::out_of_range("anchor policy: profile length " + std::to_string(profile_len) +
                            " outside [1, " + std::to_string(max_len_) + "]");
  }
  const Var hidden = relu(matmul(tape.parameter(*hidden_weight_), state));
  const Var logits = matmul(tape.parameter(*output_weight_), hidden);
  Matrix mask(max_len_, 1);
  for (std::size_t i = profile_len; i < max_len_; ++i) mask[i] = kMaskLogit;
  return log_softmax(add(logits, tape.constant(std::move(mask))));
}

PolicySample AnchorPolicy::sample(Tape& tape, const Var& state, std::size_t profile_len,
                                  Rng& rng) const {
  return sample_categorical(log_probs(tape, state, profile_len), rng);
}

// ---- item head --------------------------------------------------------------

ItemPolicy::ItemPolicy(std::size_t state_dim, std::size_t hidden, std::size_t item_dim, Rng& rng)
    : item_dim_(item_dim) {
  hidden_weight_ = &params_.add_glorot("W_I1", hidden, state_dim, rng);
  score_weight_ = &params_.add_glorot("W_I2", 1, hidden + item_dim, rng);
}

Var ItemPolicy::log_probs(Tape& tape, const Var& state, std::span<const Var> item_vectors) const {
  if (item_vectors.empty()) throw std::invalid_argument("item policy: empty candidate pool");
  const Var projected = relu(matmul(tape.parameter(*hidden_weight_), state));
  const Var w = tape.parameter(*score_weight_);
  std::vector<Var> scores;
  scores.reserve(item_vectors.size());
  for (const Var& e : item_vectors) {
    if (e.rows() != item_dim_ || e.cols() != 1) {
      throw NumericError("item policy: item vector " + e.value().shape_string() +
                         " does not match dim " + std::to_string(item_dim_));
    }
    const std::array<Var, 2> parts{projected, e};
    scores.push_back(matmul(w, concat(parts)));
  }
  return log_softmax(concat(scores));
}

PolicySample ItemPolicy::sample(Tape& tape, const Var& state, std::span<const Var> item_vectors,
                                Rng& rng) const {
  return sample_categorical(log_probs(tape, state, item_vectors), rng);
}

// ---- critic -----------------------------------------------------------------

Critic::Critic(std::size_t state_dim, std::size_t hidden, Rng& rng) {
  w1_ = &params_.add_glorot("W1", hidden, state_dim, rng);
  b1_ = &params_.add_zeros("b1", hidden, 1);
  w2_ = &params_.add_glorot("W2", 1, hidden, rng);
  b2_ = &params_.add_zeros("b2", 1, 1);
}

Var Critic::value(Tape& tape, const Var& state) const {
  const Var hidden = relu(affine(tape.parameter(*w1_), state, tape.parameter(*b1_)));
  return affine(tape.parameter(*w2_), hidden, tape.parameter(*b2_));
}

// ---- anchor ratio -----------------------------------------------------------

AnchorChoice select_anchor(Tape& tape, const AnchorPolicy& policy, const Var& state,
                           std::size_t profile_len, double anchor_ratio, Rng& rng) {
  if (anchor_ratio < 0.0 || anchor_ratio > 1.0) {
    throw std::invalid_argument("anchor ratio must lie in [0, 1]");
  }
  AnchorChoice choice;
  if (rng.uniform() < anchor_ratio) {
    PolicySample s = policy.sample(tape, state, profile_len, rng);
    choice.index = s.index;
    choice.source = AnchorSource::Policy;
    choice.log_prob = s.log_prob;
    choice.probs = std::move(s.probs);
  }
  return choice;
}

FilteredPool filter_pool(const std::optional<std::vector<ItemId>>& pool,
                         const FakeProfile& profile, std::size_t item_count) {
  FilteredPool out;
  if (pool) {
    for (ItemId item : *pool)
      if (!profile.contains(item)) out.items.push_back(item);
  }
  if (!out.items.empty()) return out;
  out.fallback = true;
  for (ItemId item = 0; item < item_count; ++item)
    if (!profile.contains(item)) out.items.push_back(item);
  return out;
}

}  // namespace kgattack
