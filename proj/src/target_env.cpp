// SPDX-License-Identifier: Apache-2.0
#include "kgattack/target_env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace kgattack {

// ---- InteractionMatrix ------------------------------------------------------

UserId InteractionMatrix::add_user(std::vector<ItemId> items) {
  for (ItemId v : items) {
    if (v >= item_count_) {
      throw ValidationError("interaction references item " + std::to_string(v) +
                            " outside [0, " + std::to_string(item_count_) + ")");
    }
  }
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  rows_.push_back(std::move(items));
  return static_cast<UserId>(rows_.size() - 1);
}

std::size_t InteractionMatrix::interaction_count() const {
  std::size_t n = 0;
  for (const auto& r : rows_) n += r.size();
  return n;
}

bool InteractionMatrix::has(UserId u, ItemId v) const {
  const auto& r = rows_.at(u);
  return std::binary_search(r.begin(), r.end(), v);
}

std::vector<std::size_t> InteractionMatrix::item_degrees() const {
  std::vector<std::size_t> deg(item_count_, 0);
  for (const auto& r : rows_)
    for (ItemId v : r) ++deg[v];
  return deg;
}

InteractionMatrix load_interactions(const std::filesystem::path& path, const KnowledgeGraph& kg) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<std::pair<std::string, ItemId>> pairs;
  std::vector<std::string> user_tokens;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size() ||
        line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected user_id<TAB>item_id");
    }
    const std::string user = line.substr(0, tab);
    const std::string item = line.substr(tab + 1);
    const auto id = kg.item_by_name(item);
    if (!id) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": item " + item +
                            " is not in the item map");
    }
    pairs.emplace_back(user, *id);
    user_tokens.push_back(user);
  }
  const auto users = dense_token_order(std::move(user_tokens));
  std::unordered_map<std::string, UserId> user_id;
  for (std::size_t i = 0; i < users.size(); ++i) user_id.emplace(users[i], i);
  std::vector<std::vector<ItemId>> rows(users.size());
  for (const auto& [u, v] : pairs) rows[user_id.at(u)].push_back(v);
  InteractionMatrix y(kg.item_count());
  for (auto& r : rows) y.add_user(std::move(r));
  y.seal();
  return y;
}

void save_interactions(const std::filesystem::path& path, const InteractionMatrix& y) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (UserId u = 0; u < y.user_count(); ++u)
    for (ItemId v : y.items_of(u)) out << u << '\t' << v << '\n';
}

// ---- matrix factorization ---------------------------------------------------

double MfModel::score(UserId u, ItemId v) const {
  const auto p = users.row(u);
  const auto q = items.row(v);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * q[i];
  return s;
}

MfModel train_mf(const InteractionMatrix& y, const MfConfig& cfg) {
  if (y.user_count() == 0 || y.interaction_count() == 0) {
    throw ValidationError("train_mf: empty interaction matrix");
  }
  Rng rng(cfg.seed);
  MfModel m{Matrix(y.user_count(), cfg.dim), Matrix(y.item_count(), cfg.dim)};
  for (double& v : m.users.values()) v = rng.uniform(-cfg.init_scale, cfg.init_scale);
  for (double& v : m.items.values()) v = rng.uniform(-cfg.init_scale, cfg.init_scale);

  std::vector<std::pair<UserId, ItemId>> positives;
  positives.reserve(y.interaction_count());
  for (UserId u = 0; u < y.user_count(); ++u)
    for (ItemId v : y.items_of(u)) positives.emplace_back(u, v);

  auto update = [&](UserId u, ItemId v, double label) {
    auto p = m.users.row(u);
    auto q = m.items.row(v);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * q[i];
    const double pred = 1.0 / (1.0 + std::exp(-s));
    const double g = pred - label;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double pu = p[i];
      const double qv = q[i];
      p[i] -= cfg.lr * (g * qv + cfg.reg * pu);
      q[i] -= cfg.lr * (g * pu + cfg.reg * qv);
    }
  };

  const std::size_t n_items = y.item_count();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = positives.size(); i > 1; --i) {
      std::swap(positives[i - 1], positives[rng.index(i)]);
    }
    for (const auto& [u, v] : positives) {
      update(u, v, 1.0);
      if (y.items_of(u).size() >= n_items) continue;
      for (std::size_t k = 0; k < cfg.negatives_per_positive; ++k) {
        ItemId neg = static_cast<ItemId>(rng.index(n_items));
        while (y.has(u, neg)) neg = static_cast<ItemId>(rng.index(n_items));
        update(u, neg, 0.0);
      }
    }
  }
  return m;
}

// ---- target models ------------------------------------------------------------

namespace {

Checkpoint mf_checkpoint(const MfModel& m, const std::string& kind) {
  Checkpoint c;
  c.meta_json = nlohmann::json{{"kind", kind}}.dump();
  c.tensors.push_back({"mf.users", m.users});
  c.tensors.push_back({"mf.items", m.items});
  return c;
}

std::uint64_t pair_key(ItemId a, ItemId b) { return (static_cast<std::uint64_t>(a) << 32) | b; }

}  // namespace

Checkpoint RetrainedMfTarget::checkpoint() const { return mf_checkpoint(model_, "retrained_mf"); }

void RetrainedMfTarget::restore(const Checkpoint& ckpt, const InteractionMatrix&) {
  model_ = MfModel{ckpt.find("mf.users"), ckpt.find("mf.items")};
}

void FrozenMfTarget::refresh(const InteractionMatrix& y) {
  if (!trained_) {
    model_ = train_mf(y, cfg_);
    trained_users_ = y.user_count();
    trained_ = true;
  }
  rebuild_overlay(y);
}

void FrozenMfTarget::rebuild_overlay(const InteractionMatrix& y) {
  data_ = y;
  const std::size_t extra = y.user_count() > trained_users_ ? y.user_count() - trained_users_ : 0;
  folded_users_ = Matrix(extra, model_.items.cols());
  cooc_delta_.clear();
  for (std::size_t k = 0; k < extra; ++k) {
    const UserId u = static_cast<UserId>(trained_users_ + k);
    const auto items = y.items_of(u);
    auto dst = folded_users_.row(k);
    for (ItemId v : items) {
      const auto q = model_.items.row(v);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += q[i];
    }
    if (!items.empty())
      for (double& x : dst) x /= static_cast<double>(items.size());
    for (ItemId a : items)
      for (ItemId b : items)
        if (a != b) cooc_delta_[pair_key(a, b)] += 1.0;
  }
}

std::vector<double> FrozenMfTarget::user_vector(UserId u) const {
  const auto row = u < trained_users_ ? model_.users.row(u) : folded_users_.row(u - trained_users_);
  return {row.begin(), row.end()};
}

double FrozenMfTarget::score(UserId u, ItemId v) const {
  const auto p = u < trained_users_ ? model_.users.row(u) : folded_users_.row(u - trained_users_);
  const auto q = model_.items.row(v);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * q[i];
  if (lambda_ == 0.0 || cooc_delta_.empty()) return s;
  const auto items = data_.items_of(u);
  if (items.empty()) return s;
  double overlay = 0.0;
  for (ItemId w : items) {
    if (auto it = cooc_delta_.find(pair_key(w, v)); it != cooc_delta_.end()) overlay += it->second;
  }
  return s + lambda_ * overlay / static_cast<double>(items.size());
}

Checkpoint FrozenMfTarget::checkpoint() const {
  Checkpoint c = mf_checkpoint(model_, "frozen_mf");
  c.meta_json = nlohmann::json{{"kind", "frozen_mf"}, {"trained_users", trained_users_}}.dump();
  return c;
}

void FrozenMfTarget::restore(const Checkpoint& ckpt, const InteractionMatrix& y) {
  model_ = MfModel{ckpt.find("mf.users"), ckpt.find("mf.items")};
  trained_users_ = nlohmann::json::parse(ckpt.meta_json).at("trained_users").get<std::size_t>();
  trained_ = true;
  rebuild_overlay(y);
}

std::unique_ptr<TargetModel> make_target_model(const EnvConfig& cfg) {
  if (cfg.mode == AttackMode::Poison) return std::make_unique<RetrainedMfTarget>(cfg.mf);
  return std::make_unique<FrozenMfTarget>(cfg.mf, cfg.cooc_lambda);
}

// ---- environment ----------------------------------------------------------------

RecommenderEnv::RecommenderEnv(InteractionMatrix clean, ItemId target, EnvConfig cfg)
    : RecommenderEnv(std::move(clean), target, cfg, make_target_model(cfg)) {}

RecommenderEnv::RecommenderEnv(InteractionMatrix clean, ItemId target, EnvConfig cfg,
                               std::unique_ptr<TargetModel> model)
    : data_(std::move(clean)), target_(target), cfg_(cfg), model_(std::move(model)) {
  if (data_.user_count() == 0 || data_.interaction_count() == 0) {
    throw ValidationError("environment: empty interaction matrix");
  }
  if (target_ >= data_.item_count()) throw ValidationError("environment: target item out of range");
  if (cfg_.candidate_list_size < 1 || cfg_.candidate_list_size > data_.item_count()) {
    throw ValidationError("environment: candidate list size must lie in [1, item_count]");
  }
  data_.seal();
  draw_users_and_candidates();
  model_->refresh(data_);
}

RecommenderEnv::RecommenderEnv(RestoreTag, InteractionMatrix data, ItemId target, EnvConfig cfg,
                               std::unique_ptr<TargetModel> model)
    : data_(std::move(data)), target_(target), cfg_(cfg), model_(std::move(model)) {}

void RecommenderEnv::draw_users_and_candidates() {
  Rng rng = Rng::derive({cfg_.seed, 0x5157ULL});
  const std::size_t others = cfg_.candidate_list_size - 1;
  std::vector<UserId> eligible;
  for (UserId u = 0; u < data_.original_user_count(); ++u) {
    if (data_.has(u, target_)) continue;
    if (data_.item_count() - 1 - data_.items_of(u).size() < others) continue;
    eligible.push_back(u);
  }
  if (eligible.size() < cfg_.spy_users + 1) {
    throw ValidationError("environment: only " + std::to_string(eligible.size()) +
                          " users are eligible as spy/normal users for the target item");
  }
  for (std::size_t i = eligible.size(); i > 1; --i) std::swap(eligible[i - 1], eligible[rng.index(i)]);
  spies_.assign(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(cfg_.spy_users));
  const std::size_t normal_count = std::min(cfg_.normal_users, eligible.size() - cfg_.spy_users);
  normals_.assign(eligible.begin() + static_cast<std::ptrdiff_t>(cfg_.spy_users),
                  eligible.begin() + static_cast<std::ptrdiff_t>(cfg_.spy_users + normal_count));
  std::sort(spies_.begin(), spies_.end());
  std::sort(normals_.begin(), normals_.end());

  auto build = [&](UserId u) {
    std::vector<ItemId> pool;
    for (ItemId v = 0; v < data_.item_count(); ++v)
      if (v != target_ && !data_.has(u, v)) pool.push_back(v);
    std::vector<ItemId> list{target_};
    for (std::size_t idx : rng.sample_without_replacement(pool.size(), others)) list.push_back(pool[idx]);
    std::sort(list.begin(), list.end());
    candidates_.emplace(u, std::move(list));
  };
  for (UserId u : spies_) build(u);
  for (UserId u : normals_) build(u);
}

std::span<const ItemId> RecommenderEnv::candidates(UserId u) const {
  auto it = candidates_.find(u);
  if (it == candidates_.end()) {
    throw ValidationError("user " + std::to_string(u) + " has no candidate list");
  }
  return it->second;
}

void RecommenderEnv::inject(std::span<const FakeProfile> profiles) {
  if (injected_ + profiles.size() > cfg_.budget) {
    throw BudgetError("injection of " + std::to_string(profiles.size()) + " profiles exceeds budget (" +
                      std::to_string(injected_) + " of " + std::to_string(cfg_.budget) + " used)");
  }
  for (const FakeProfile& p : profiles) {
    if (p.empty() || p.size() > cfg_.max_profile_len) {
      throw ValidationError("fake profile length " + std::to_string(p.size()) + " outside [1, " +
                            std::to_string(cfg_.max_profile_len) + "]");
    }
  }
  for (const FakeProfile& p : profiles) data_.add_user(p.items);
  injected_ += profiles.size();
  if (!profiles.empty()) stale_ = true;
}

void RecommenderEnv::sync() {
  if (!stale_) return;
  model_->refresh(data_);
  stale_ = false;
}

std::vector<ItemId> RecommenderEnv::ranked_candidates(UserId u) {
  sync();
  const auto list = candidates(u);
  std::vector<std::pair<double, ItemId>> scored;
  scored.reserve(list.size());
  for (ItemId v : list) scored.emplace_back(model_->score(u, v), v);
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<ItemId> out;
  out.reserve(scored.size());
  for (const auto& s : scored) out.push_back(s.second);
  return out;
}

std::vector<ItemId> RecommenderEnv::top_k(UserId u, std::size_t k) {
  auto ranked = ranked_candidates(u);
  ranked.resize(std::min(k, ranked.size()));
  return ranked;
}

RewardRecord RecommenderEnv::query_reward(ItemId target) {
  RewardRecord rec;
  rec.hits.reserve(spies_.size());
  std::size_t total = 0;
  for (UserId u : spies_) {
    const auto list = candidates(u);
    if (!std::binary_search(list.begin(), list.end(), target)) {
      throw ValidationError("target item " + std::to_string(target) +
                            " missing from candidate list of spy user " + std::to_string(u));
    }
    const auto top = top_k(u, cfg_.k);
    const bool hit = std::find(top.begin(), top.end(), target) != top.end();
    rec.hits.push_back(hit ? 1 : 0);
    total += hit ? 1 : 0;
  }
  rec.reward = spies_.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(spies_.size());
  return rec;
}

RankingMetrics RecommenderEnv::evaluate(std::size_t k) { return evaluate_users(normals_, k); }

RankingMetrics RecommenderEnv::evaluate_users(std::span<const UserId> users, std::size_t k) {
  RankingMetrics m;
  m.k = k;
  m.users = users.size();
  if (users.empty()) return m;
  double hits = 0.0, gain = 0.0;
  for (UserId u : users) {
    const auto list = candidates(u);
    if (!std::binary_search(list.begin(), list.end(), target_)) {
      throw ValidationError("target item missing from candidate list of user " + std::to_string(u));
    }
    const auto top = top_k(u, k);
    const auto pos = std::find(top.begin(), top.end(), target_);
    if (pos == top.end()) continue;
    const double rank = static_cast<double>(pos - top.begin()) + 1.0;
    hits += 1.0;
    gain += 1.0 / std::log2(rank + 1.0);
  }
  m.hit_ratio = hits / static_cast<double>(users.size());
  m.ndcg = gain / static_cast<double>(users.size());
  return m;
}

// ---- snapshots ------------------------------------------------------------------

void RecommenderEnv::save_snapshot(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save_interactions(dir / "interactions.tsv", data_);
  save_checkpoint(dir / "model.ckpt", model_->checkpoint());
  nlohmann::json j;
  j["target"] = target_;
  j["mode"] = cfg_.mode == AttackMode::Poison ? "poison" : "evasion";
  j["mf"] = {{"dim", cfg_.mf.dim},
             {"epochs", cfg_.mf.epochs},
             {"lr", cfg_.mf.lr},
             {"reg", cfg_.mf.reg},
             {"negatives_per_positive", cfg_.mf.negatives_per_positive},
             {"init_scale", cfg_.mf.init_scale},
             {"seed", cfg_.mf.seed}};
  j["spy_users"] = cfg_.spy_users;
  j["normal_users"] = cfg_.normal_users;
  j["candidate_list_size"] = cfg_.candidate_list_size;
  j["k"] = cfg_.k;
  j["budget"] = cfg_.budget;
  j["max_profile_len"] = cfg_.max_profile_len;
  j["cooc_lambda"] = cfg_.cooc_lambda;
  j["seed"] = cfg_.seed;
  j["item_count"] = data_.item_count();
  j["original_users"] = data_.original_user_count();
  j["user_count"] = data_.user_count();
  j["injected"] = injected_;
  j["stale"] = stale_;
  j["spies"] = spies_;
  j["normals"] = normals_;
  nlohmann::json cand = nlohmann::json::object();
  for (UserId u : spies_) cand[std::to_string(u)] = candidates_.at(u);
  for (UserId u : normals_) cand[std::to_string(u)] = candidates_.at(u);
  j["candidates"] = cand;
  std::ofstream(dir / "env.json") << j.dump(1) << '\n';
}

RecommenderEnv RecommenderEnv::load_snapshot(const std::filesystem::path& dir) {
  std::ifstream in(dir / "env.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "env.json").string());
  const auto j = nlohmann::json::parse(in);
  EnvConfig cfg;
  cfg.mode = j.at("mode").get<std::string>() == "poison" ? AttackMode::Poison : AttackMode::Evasion;
  const auto& mf = j.at("mf");
  cfg.mf.dim = mf.at("dim");
  cfg.mf.epochs = mf.at("epochs");
  cfg.mf.lr = mf.at("lr");
  cfg.mf.reg = mf.at("reg");
  cfg.mf.negatives_per_positive = mf.at("negatives_per_positive");
  cfg.mf.init_scale = mf.at("init_scale");
  cfg.mf.seed = mf.at("seed");
  cfg.spy_users = j.at("spy_users");
  cfg.normal_users = j.at("normal_users");
  cfg.candidate_list_size = j.at("candidate_list_size");
  cfg.k = j.at("k");
  cfg.budget = j.at("budget");
  cfg.max_profile_len = j.at("max_profile_len");
  cfg.cooc_lambda = j.at("cooc_lambda");
  cfg.seed = j.at("seed");

  // Rows are rebuilt from the interaction dump; users with no rows keep an
  // empty row so ids stay aligned.
  const std::size_t user_count = j.at("user_count");
  const std::size_t original = j.at("original_users");
  std::vector<std::vector<ItemId>> rows(user_count);
  std::ifstream tsv(dir / "interactions.tsv");
  UserId u;
  ItemId v;
  while (tsv >> u >> v) {
    if (u >= user_count) throw ValidationError("snapshot: user id out of range");
    rows[u].push_back(v);
  }
  InteractionMatrix data(j.at("item_count").get<std::size_t>());
  for (std::size_t i = 0; i < original; ++i) data.add_user(std::move(rows[i]));
  data.seal();
  for (std::size_t i = original; i < user_count; ++i) data.add_user(std::move(rows[i]));

  RecommenderEnv env(RestoreTag{}, std::move(data), j.at("target").get<ItemId>(), cfg,
                     make_target_model(cfg));
  env.injected_ = j.at("injected");
  env.stale_ = j.at("stale");
  env.spies_ = j.at("spies").get<std::vector<UserId>>();
  env.normals_ = j.at("normals").get<std::vector<UserId>>();
  for (const auto& [key, list] : j.at("candidates").items()) {
    env.candidates_.emplace(static_cast<UserId>(std::stoul(key)), list.get<std::vector<ItemId>>());
  }
  env.model_->restore(load_checkpoint(dir / "model.ckpt"), env.data_);
  return env;
}

}  // namespace kgattack
