// SPDX-License-Identifier: Apache-2.0
//
// Episode loop of the KG-guided injection attack: N fake profiles are grown
// item by item under the hierarchical policy, injected together, and the
// single spy-user hit ratio that comes back becomes the terminal reward of
// every trajectory. The critic and both actors are then updated with the
// clipped surrogate objective and the buffer is cleared.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgattack/autodiff.hpp"
#include "kgattack/kg_store.hpp"
#include "kgattack/policy.hpp"
#include "kgattack/profile.hpp"
#include "kgattack/state_encoder.hpp"
#include "kgattack/target_env.hpp"
#include "kgattack/transe.hpp"

namespace kgattack {

struct TrainConfig {
  std::size_t budget = 75;               // Delta
  std::size_t profiles_per_episode = 3;  // N
  std::size_t steps = 8;                 // T (picked items per profile)
  double gamma = 0.99;
  double clip = 0.2;  // psi
  double anchor_ratio = 0.7;
  std::size_t hops = 2;
  std::size_t pool_size = 50;
  std::size_t k = 20;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  std::size_t ppo_epochs = 4;
  bool standardize_advantages = true;
  double entropy_coef = 0.0;
  std::size_t policy_hidden = 32;
  /// Expand candidate pools (and GNN neighborhoods) over both edge directions.
  bool undirected_kg = false;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
  std::size_t episodes() const { return budget / profiles_per_episode; }
};

struct Transition {
  std::size_t trajectory = 0;
  std::size_t step = 0;
  /// Profile before the action (s_t); s_{t+1} is this plus `item`.
  std::vector<ItemId> profile;
  Matrix state;  // encoded x_t at rollout time
  AnchorSource anchor_source = AnchorSource::TargetForced;
  std::size_t anchor_index = 0;
  std::optional<double> anchor_log_prob;
  /// Filtered pool the item was picked from.
  std::vector<ItemId> pool;
  bool fallback = false;
  std::size_t item_index = 0;
  ItemId item = 0;
  double item_log_prob = 0.0;
  double reward = 0.0;
  bool terminal = false;
};

class ReplayBuffer {
 public:
  void push(Transition t) { items_.push_back(std::move(t)); }
  void clear() { items_.clear(); }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::span<const Transition> transitions() const { return items_; }
  std::span<Transition> transitions() { return items_; }

 private:
  std::vector<Transition> items_;
};

// ---- loss pieces -------------------------------------------------------------

/// G_t = sum_j gamma^j r_{t+j}, computed backward. Throws on an empty list.
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);

/// A_t = G_t - V_t, optionally standardized to zero mean / unit variance
/// (centered only when the spread is ~0).
std::vector<double> advantages(std::span<const double> returns, std::span<const double> values,
                               bool standardize);

/// sum_t (G_t - V_t)^2 over 1x1 value nodes.
Var critic_loss(Tape& tape, std::span<const Var> values, std::span<const double> returns);

/// mean_t min(rho_t A_t, clip(rho_t, 1-psi, 1+psi) A_t) with
/// rho_t = exp(new_t - old_t). `new_log_probs` are 1x1 nodes.
Var ppo_clipped_objective(Tape& tape, std::span<const Var> new_log_probs,
                          std::span<const double> old_log_probs,
                          std::span<const double> advantages, double clip);

// ---- agent -------------------------------------------------------------------

struct RolloutResult {
  std::vector<FakeProfile> profiles;
  double reward = 0.0;
  std::size_t fallbacks = 0;
};

struct UpdateStats {
  double critic_loss = 0.0;
  double anchor_objective = 0.0;
  double item_objective = 0.0;
  std::size_t anchor_steps = 0;
  std::size_t item_steps = 0;
};

class KgAttackAgent {
 public:
  KgAttackAgent(const KnowledgeGraph& graph, KgEmbeddings embeddings, EncoderConfig encoder_cfg,
                TrainConfig cfg);
  KgAttackAgent(const KgAttackAgent&) = delete;
  KgAttackAgent& operator=(const KgAttackAgent&) = delete;

  /// Builds N profiles for `target` with the current policy, injects them,
  /// queries the reward once and pushes N*T transitions into `buffer`.
  /// Randomness comes from the stream (seed, episode, trajectory).
  RolloutResult generate_trajectories(AttackSurface& env, ItemId target, std::size_t episode,
                                      ReplayBuffer& buffer);

  /// Critic, then anchor actor, then item actor; each for ppo_epochs passes
  /// over the whole buffer.
  UpdateStats update(const ReplayBuffer& buffer);

  /// Log-probabilities of the recorded actions under the current
  /// parameters, recomputed on one tape (anchor entry absent for forced
  /// anchors, item entry absent for fallback picks).
  struct Replay {
    std::vector<std::optional<double>> anchor_log_probs;
    std::vector<std::optional<double>> item_log_probs;
    std::vector<double> values;
  };
  Replay replay(const ReplayBuffer& buffer) const;

  Checkpoint checkpoint() const;
  void restore(const Checkpoint& ckpt);

  const TrainConfig& config() const { return cfg_; }
  const KnowledgeGraph& graph() const { return graph_; }
  StateEncoder& encoder() { return encoder_; }
  AnchorPolicy& anchor_policy() { return anchor_; }
  ItemPolicy& item_policy() { return item_; }
  Critic& critic() { return critic_; }

 private:
  Var anchor_log_probs(Tape& tape, StateEncoder::Session& s, const Transition& tr) const;
  Var item_log_probs(Tape& tape, StateEncoder::Session& s, const Transition& tr) const;
  Var state_of(StateEncoder::Session& s, const Transition& tr) const;

  TrainConfig cfg_;
  KnowledgeGraph graph_;
  KgEmbeddings embeddings_;
  Rng init_rng_;
  StateEncoder encoder_;
  AnchorPolicy anchor_;
  ItemPolicy item_;
  Critic critic_;
};

// ---- outer loop --------------------------------------------------------------

struct EpisodeRecord {
  std::size_t episode = 0;
  double reward = 0.0;
  double hit_ratio = 0.0;
  double ndcg = 0.0;
  double critic_loss = 0.0;
  double anchor_objective = 0.0;
  double item_objective = 0.0;
  std::size_t fallbacks = 0;
};

struct AttackTrace {
  std::vector<EpisodeRecord> episodes;
  std::vector<FakeProfile> injected;
};

struct RunOptions {
  /// Per-episode CSV; skipped when empty.
  std::filesystem::path metrics_csv;
  /// Extra line written first in the metrics CSV (e.g. "# config_hash=...").
  std::string header_comment;
  /// Agent checkpoints every `checkpoint_every` episodes (0 = never).
  std::filesystem::path checkpoint_dir;
  std::size_t checkpoint_every = 0;
};

/// Runs budget / N episodes against `env`, evaluating HR@k / NDCG@k on the
/// normal users after each episode.
AttackTrace run_attack(RecommenderEnv& env, KgAttackAgent& agent, const RunOptions& options = {});

/// Fixed-format CSV row, byte-stable across runs.
std::string metrics_csv_header();
std::string metrics_csv_row(const EpisodeRecord& r);

}  // namespace kgattack
