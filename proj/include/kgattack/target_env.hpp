// SPDX-License-Identifier: Apache-2.0
//
// Black-box target recommender environments. The attacker only sees the
// AttackSurface interface (inject profiles, query spy-user hit ratio);
// evaluation on held-out normal users is reserved for the harness.
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgattack/kg_store.hpp"
#include "kgattack/parameters.hpp"
#include "kgattack/profile.hpp"
#include "kgattack/tensor.hpp"

namespace kgattack {

/// Implicit-feedback user x item interactions. Rows present when the
/// matrix is sealed are the original users; later rows are injected.
class InteractionMatrix {
 public:
  explicit InteractionMatrix(std::size_t item_count = 0) : item_count_(item_count) {}

  /// Appends a user row (items are sorted and deduplicated).
  UserId add_user(std::vector<ItemId> items);
  /// Marks all current rows as original; later rows count as injected.
  void seal() { original_users_ = rows_.size(); }

  std::size_t user_count() const { return rows_.size(); }
  std::size_t item_count() const { return item_count_; }
  std::size_t original_user_count() const { return original_users_; }
  std::size_t interaction_count() const;
  std::span<const ItemId> items_of(UserId u) const { return rows_.at(u); }
  bool has(UserId u, ItemId v) const;
  /// Number of users that interacted with each item.
  std::vector<std::size_t> item_degrees() const;

  bool operator==(const InteractionMatrix&) const = default;

 private:
  std::size_t item_count_ = 0;
  std::size_t original_users_ = 0;
  std::vector<std::vector<ItemId>> rows_;
};

/// Reads `user_id<TAB>item_id` lines; item tokens are resolved through the
/// KG item map, user tokens are remapped densely. The result is sealed.
InteractionMatrix load_interactions(const std::filesystem::path& path, const KnowledgeGraph& kg);
void save_interactions(const std::filesystem::path& path, const InteractionMatrix& y);

// ---- matrix factorization ---------------------------------------------------

struct MfConfig {
  std::size_t dim = 16;
  std::size_t epochs = 20;
  double lr = 0.05;
  double reg = 0.03;
  std::size_t negatives_per_positive = 4;
  /// Factors start U(-init_scale, init_scale); 0 gives all-zero factors.
  double init_scale = 0.1;
  std::uint64_t seed = 1;
};

struct MfModel {
  Matrix users;  // user_count x dim
  Matrix items;  // item_count x dim

  double score(UserId u, ItemId v) const;
};

/// Logistic matrix factorization with uniform negative sampling (SGD).
MfModel train_mf(const InteractionMatrix& y, const MfConfig& cfg);

// ---- target models ------------------------------------------------------------

/// Opaque scoring model behind the environment.
class TargetModel {
 public:
  virtual ~TargetModel() = default;
  virtual double score(UserId u, ItemId v) const = 0;
  /// Brings the model in line with the current (possibly polluted) data.
  virtual void refresh(const InteractionMatrix& y) = 0;
  virtual Checkpoint checkpoint() const = 0;
  virtual void restore(const Checkpoint& ckpt, const InteractionMatrix& y) = 0;
};

/// Poison setting: retrained from scratch (same seed) on every refresh.
class RetrainedMfTarget : public TargetModel {
 public:
  explicit RetrainedMfTarget(MfConfig cfg) : cfg_(cfg) {}
  double score(UserId u, ItemId v) const override { return model_.score(u, v); }
  void refresh(const InteractionMatrix& y) override { model_ = train_mf(y, cfg_); }
  Checkpoint checkpoint() const override;
  void restore(const Checkpoint& ckpt, const InteractionMatrix& y) override;
  const MfModel& model() const { return model_; }

 private:
  MfConfig cfg_;
  MfModel model_;
};

/// Evasion setting: MF trained once on clean data and frozen. Users added
/// later are folded in as the mean of their items' factors. Injected
/// profiles still move rankings through a co-occurrence blend:
///   score(u, v) = <p_u, q_v> + lambda * mean_{w in I_u} dC(w, v)
/// where dC(w, v) counts injected profiles containing both w and v.
class FrozenMfTarget : public TargetModel {
 public:
  FrozenMfTarget(MfConfig cfg, double cooc_lambda) : cfg_(cfg), lambda_(cooc_lambda) {}
  double score(UserId u, ItemId v) const override;
  void refresh(const InteractionMatrix& y) override;
  Checkpoint checkpoint() const override;
  void restore(const Checkpoint& ckpt, const InteractionMatrix& y) override;

  const MfModel& model() const { return model_; }
  /// Inductive user vector (trained factor, or fold-in for new users).
  std::vector<double> user_vector(UserId u) const;

 private:
  void rebuild_overlay(const InteractionMatrix& y);

  MfConfig cfg_;
  double lambda_;
  bool trained_ = false;
  MfModel model_;
  std::size_t trained_users_ = 0;
  Matrix folded_users_;  // rows for users added after training
  std::unordered_map<std::uint64_t, double> cooc_delta_;
  InteractionMatrix data_;
};

// ---- environment ----------------------------------------------------------------

enum class AttackMode { Evasion, Poison };

struct EnvConfig {
  AttackMode mode = AttackMode::Poison;
  MfConfig mf;
  std::size_t spy_users = 50;
  std::size_t normal_users = 500;
  /// Total candidate list length per user, target item included.
  std::size_t candidate_list_size = 100;
  std::size_t k = 20;
  std::size_t budget = 75;
  std::size_t max_profile_len = 9;
  double cooc_lambda = 0.1;
  std::uint64_t seed = 1;
};

struct RewardRecord {
  double reward = 0.0;
  std::vector<std::uint8_t> hits;  // one per spy user
};

struct RankingMetrics {
  double hit_ratio = 0.0;
  double ndcg = 0.0;
  std::size_t users = 0;
  std::size_t k = 0;
};

class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// What an attacker may do with the target system.
class AttackSurface {
 public:
  virtual ~AttackSurface() = default;
  virtual void inject(std::span<const FakeProfile> profiles) = 0;
  virtual RewardRecord query_reward(ItemId target) = 0;
  virtual std::size_t remaining_budget() const = 0;
  virtual std::size_t item_count() const = 0;
};

class RecommenderEnv : public AttackSurface {
 public:
  /// Builds the target model from `cfg.mode`, trains it on `clean`, and
  /// draws spy users, normal users and candidate lists for `target`.
  RecommenderEnv(InteractionMatrix clean, ItemId target, EnvConfig cfg);
  /// Same with a caller-supplied model (trained by the constructor).
  RecommenderEnv(InteractionMatrix clean, ItemId target, EnvConfig cfg,
                 std::unique_ptr<TargetModel> model);

  void inject(std::span<const FakeProfile> profiles) override;
  RewardRecord query_reward(ItemId target) override;
  std::size_t remaining_budget() const override { return cfg_.budget - injected_; }
  std::size_t item_count() const override { return data_.item_count(); }

  /// HR@k / NDCG@k of the target item over the normal users.
  RankingMetrics evaluate(std::size_t k);
  /// Same metric over an explicit user set (each needs a candidate list).
  RankingMetrics evaluate_users(std::span<const UserId> users, std::size_t k);

  /// Candidate list ranked by score desc, ties by ascending item id.
  std::vector<ItemId> ranked_candidates(UserId u);
  std::vector<ItemId> top_k(UserId u, std::size_t k);

  ItemId target() const { return target_; }
  std::size_t injected() const { return injected_; }
  const EnvConfig& config() const { return cfg_; }
  const InteractionMatrix& interactions() const { return data_; }
  std::span<const UserId> spy_users() const { return spies_; }
  std::span<const UserId> normal_users() const { return normals_; }
  std::span<const ItemId> candidates(UserId u) const;
  const TargetModel& model() const { return *model_; }

  /// Writes interactions.tsv (all rows, including injected), model.ckpt and
  /// env.json into `dir`.
  void save_snapshot(const std::filesystem::path& dir) const;
  static RecommenderEnv load_snapshot(const std::filesystem::path& dir);

 private:
  struct RestoreTag {};
  RecommenderEnv(RestoreTag, InteractionMatrix data, ItemId target, EnvConfig cfg,
                 std::unique_ptr<TargetModel> model);
  void sync();
  void draw_users_and_candidates();

  InteractionMatrix data_;
  ItemId target_;
  EnvConfig cfg_;
  std::unique_ptr<TargetModel> model_;
  bool stale_ = false;
  std::size_t injected_ = 0;
  std::vector<UserId> spies_;
  std::vector<UserId> normals_;
  std::unordered_map<UserId, std::vector<ItemId>> candidates_;
};

std::unique_ptr<TargetModel> make_target_model(const EnvConfig& cfg);

}  // namespace kgattack
