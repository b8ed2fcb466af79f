// SPDX-License-Identifier: Apache-2.0
#include "kgattack/attack_trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace kgattack {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (profiles_per_episode == 0) fail("profiles_per_episode must be >= 1");
  if (budget % profiles_per_episode != 0) {
    fail("budget " + std::to_string(budget) + " is not divisible by profiles_per_episode " +
         std::to_string(profiles_per_episode));
  }
  if (steps == 0) fail("steps must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must lie in [0, 1]");
  if (!(clip > 0.0)) fail("clip must be > 0");
  if (!(anchor_ratio >= 0.0 && anchor_ratio <= 1.0)) fail("anchor_ratio must lie in [0, 1]");
  if (hops == 0) fail("hops must be >= 1");
  if (pool_size == 0) fail("pool_size must be >= 1");
  if (k == 0) fail("k must be >= 1");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) fail("learning rates must be > 0");
  if (ppo_epochs == 0) fail("ppo_epochs must be >= 1");
  if (policy_hidden == 0) fail("policy_hidden must be >= 1");
  if (entropy_coef < 0.0) fail("entropy_coef must be >= 0");
}

// ---- loss pieces -------------------------------------------------------------

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  if (rewards.empty()) throw std::invalid_argument("discounted_returns: empty reward list");
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

std::vector<double> advantages(std::span<const double> returns, std::span<const double> values,
                               bool standardize) {
  if (returns.size() != values.size()) {
    throw std::invalid_argument("advantages: returns and values differ in length");
  }
  std::vector<double> a(returns.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = returns[i] - values[i];
  if (!standardize || a.empty()) return a;
  double mean = 0.0;
  for (double x : a) mean += x;
  mean /= static_cast<double>(a.size());
  double var = 0.0;
  for (double x : a) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / static_cast<double>(a.size()));
  for (double& x : a) x = sd < 1e-12 ? x - mean : (x - mean) / sd;
  return a;
}

Var critic_loss(Tape& tape, std::span<const Var> values, std::span<const double> returns) {
  if (values.empty() || values.size() != returns.size()) {
    throw std::invalid_argument("critic_loss: need matching, nonempty values and returns");
  }
  const Var v = concat(values);
  const Var g = tape.constant(Matrix::column({returns.begin(), returns.end()}));
  const Var diff = sub(g, v);
  return dot(diff, diff);
}

Var ppo_clipped_objective(Tape& tape, std::span<const Var> new_log_probs,
                          std::span<const double> old_log_probs,
                          std::span<const double> advantages, double clip) {
  const std::size_t n = new_log_probs.size();
  if (n == 0 || old_log_probs.size() != n || advantages.size() != n) {
    throw std::invalid_argument("ppo objective: need matching, nonempty inputs");
  }
  if (!(clip > 0.0)) throw std::invalid_argument("ppo objective: clip must be > 0");
  const Var lp = concat(new_log_probs);
  const Var old = tape.constant(Matrix::column({old_log_probs.begin(), old_log_probs.end()}));
  const Var adv = tape.constant(Matrix::column({advantages.begin(), advantages.end()}));
  const Var ratio = exp(sub(lp, old));
  const Var plain = hadamard(ratio, adv);
  const Var clipped = hadamard(clamp(ratio, 1.0 - clip, 1.0 + clip), adv);
  return scale(sum(minimum(plain, clipped)), 1.0 / static_cast<double>(n));
}

// ---- agent -------------------------------------------------------------------

namespace {

KnowledgeGraph working_graph(const KnowledgeGraph& g, bool undirected) {
  return undirected ? g.symmetrized() : g;
}

Var entropy_of(const Var& log_probs) {
  return scale(dot(exp(log_probs), log_probs), -1.0);
}

}  // namespace

KgAttackAgent::KgAttackAgent(const KnowledgeGraph& graph, KgEmbeddings embeddings,
                             EncoderConfig encoder_cfg, TrainConfig cfg)
    : cfg_((cfg.validate(), cfg)),
      graph_(working_graph(graph, cfg.undirected_kg)),
      embeddings_(std::move(embeddings)),
      init_rng_(Rng::derive({cfg.seed, 0x1a17ULL})),
      encoder_(graph_, embeddings_, encoder_cfg, init_rng_),
      anchor_(encoder_.state_dim(), cfg.policy_hidden, cfg.steps, init_rng_),
      item_(encoder_.state_dim(), cfg.policy_hidden, embeddings_.dim(), init_rng_),
      critic_(encoder_.state_dim(), cfg.policy_hidden, init_rng_) {
  if (embeddings_.entities.rows() != graph_.entity_count()) {
    throw ValidationError("agent: embedding table does not match the graph's entity count");
  }
}

Var KgAttackAgent::state_of(StateEncoder::Session& s, const Transition& tr) const {
  return encoder_.encode(s, tr.profile);
}

Var KgAttackAgent::anchor_log_probs(Tape& tape, StateEncoder::Session& s,
                                    const Transition& tr) const {
  return anchor_.log_probs(tape, state_of(s, tr), tr.profile.size());
}

Var KgAttackAgent::item_log_probs(Tape& tape, StateEncoder::Session& s,
                                  const Transition& tr) const {
  std::vector<Var> vectors;
  vectors.reserve(tr.pool.size());
  for (ItemId j : tr.pool) vectors.push_back(encoder_.item_embedding(s, j));
  return item_.log_probs(tape, state_of(s, tr), vectors);
}

RolloutResult KgAttackAgent::generate_trajectories(AttackSurface& env, ItemId target,
                                                   std::size_t episode, ReplayBuffer& buffer) {
  const std::size_t n = cfg_.profiles_per_episode;
  if (env.remaining_budget() < n) {
    throw BudgetError("remaining budget " + std::to_string(env.remaining_budget()) +
                      " is below the " + std::to_string(n) + " profiles of an episode");
  }
  if (env.item_count() != graph_.item_count()) {
    throw ValidationError("agent: environment and knowledge graph disagree on item count");
  }
  RolloutResult out;
  const std::size_t first = buffer.size();
  for (std::size_t traj = 0; traj < n; ++traj) {
    Rng rng = Rng::derive({cfg_.seed, episode, traj});
    Tape tape;
    StateEncoder::Session session(tape);
    FakeProfile profile(target);
    for (std::size_t t = 0; t < cfg_.steps; ++t) {
      Transition tr;
      tr.trajectory = traj;
      tr.step = t;
      tr.profile = profile.items;
      const Var state = encoder_.encode(session, profile.items);
      tr.state = state.value();

      const AnchorChoice anchor =
          select_anchor(tape, anchor_, state, profile.size(), cfg_.anchor_ratio, rng);
      tr.anchor_source = anchor.source;
      tr.anchor_index = anchor.index;
      tr.anchor_log_prob = anchor.log_prob;

      const auto raw = candidate_pool(graph_, profile.items[anchor.index], cfg_.hops,
                                      cfg_.pool_size, rng);
      FilteredPool pool = filter_pool(raw, profile, graph_.item_count());
      if (pool.items.empty()) {
        throw ValidationError("agent: every item is already in the fake profile");
      }
      tr.fallback = pool.fallback;
      if (pool.fallback) {
        ++out.fallbacks;
        tr.item_index = rng.index(pool.items.size());
        tr.item_log_prob = -std::log(static_cast<double>(pool.items.size()));
      } else {
        std::vector<Var> vectors;
        vectors.reserve(pool.items.size());
        for (ItemId j : pool.items) vectors.push_back(encoder_.item_embedding(session, j));
        const PolicySample pick = item_.sample(tape, state, vectors, rng);
        tr.item_index = pick.index;
        tr.item_log_prob = pick.log_prob;
      }
      tr.item = pool.items[tr.item_index];
      tr.pool = std::move(pool.items);
      tr.terminal = t + 1 == cfg_.steps;
      profile.append(tr.item);
      buffer.push(std::move(tr));
    }
    out.profiles.push_back(std::move(profile));
  }

  env.inject(out.profiles);
  out.reward = env.query_reward(target).reward;
  for (Transition& tr : buffer.transitions().subspan(first)) {
    if (tr.terminal) tr.reward = out.reward;
  }
  return out;
}

KgAttackAgent::Replay KgAttackAgent::replay(const ReplayBuffer& buffer) const {
  Replay r;
  Tape tape;
  StateEncoder::Session session(tape);
  for (const Transition& tr : buffer.transitions()) {
    if (tr.anchor_source == AnchorSource::Policy) {
      r.anchor_log_probs.push_back(anchor_log_probs(tape, session, tr).value()[tr.anchor_index]);
    } else {
      r.anchor_log_probs.push_back(std::nullopt);
    }
    if (!tr.fallback) {
      r.item_log_probs.push_back(item_log_probs(tape, session, tr).value()[tr.item_index]);
    } else {
      r.item_log_probs.push_back(std::nullopt);
    }
    r.values.push_back(critic_.value(tape, detach(state_of(session, tr))).scalar());
  }
  return r;
}

UpdateStats KgAttackAgent::update(const ReplayBuffer& buffer) {
  UpdateStats stats;
  const auto trs = buffer.transitions();
  if (trs.empty()) return stats;

  // Returns per trajectory; the buffer is trajectory-major in step order.
  std::vector<double> returns(trs.size());
  for (std::size_t begin = 0; begin < trs.size();) {
    std::size_t end = begin;
    while (end < trs.size() && trs[end].trajectory == trs[begin].trajectory) ++end;
    std::vector<double> rewards;
    for (std::size_t i = begin; i < end; ++i) rewards.push_back(trs[i].reward);
    const auto g = discounted_returns(rewards, cfg_.gamma);
    std::copy(g.begin(), g.end(), returns.begin() + static_cast<std::ptrdiff_t>(begin));
    begin = end;
  }

  std::vector<Matrix> states;
  std::vector<double> values;
  {
    Tape tape;
    StateEncoder::Session session(tape);
    for (const Transition& tr : trs) {
      states.push_back(state_of(session, tr).value());
      values.push_back(critic_.value(tape, tape.constant(states.back())).scalar());
    }
  }
  const auto adv = advantages(returns, values, cfg_.standardize_advantages);

  const AdamConfig critic_adam{.lr = cfg_.critic_lr};
  const AdamConfig actor_adam{.lr = cfg_.actor_lr};

  for (std::size_t epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
    Tape tape;
    std::vector<Var> v;
    v.reserve(trs.size());
    for (const Matrix& s : states) v.push_back(critic_.value(tape, tape.constant(s)));
    const Var loss = critic_loss(tape, v, returns);
    if (epoch == 0) stats.critic_loss = loss.scalar();
    tape.backward(loss);
    critic_.params().adam_step(critic_adam);
  }

  std::vector<std::size_t> anchor_steps, item_steps;
  for (std::size_t i = 0; i < trs.size(); ++i) {
    if (trs[i].anchor_source == AnchorSource::Policy) anchor_steps.push_back(i);
    if (!trs[i].fallback) item_steps.push_back(i);
  }
  stats.anchor_steps = anchor_steps.size();
  stats.item_steps = item_steps.size();

  auto actor_phase = [&](const std::vector<std::size_t>& steps, bool anchor_head) {
    double first_objective = 0.0;
    if (steps.empty()) return first_objective;
    std::vector<double> old, a;
    for (std::size_t i : steps) {
      old.push_back(anchor_head ? *trs[i].anchor_log_prob : trs[i].item_log_prob);
      a.push_back(adv[i]);
    }
    for (std::size_t epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
      Tape tape;
      StateEncoder::Session session(tape);
      std::vector<Var> picked, entropies;
      for (std::size_t i : steps) {
        const Transition& tr = trs[i];
        const Var lp = anchor_head ? anchor_log_probs(tape, session, tr)
                                   : item_log_probs(tape, session, tr);
        picked.push_back(element(lp, anchor_head ? tr.anchor_index : tr.item_index));
        if (cfg_.entropy_coef > 0.0) entropies.push_back(entropy_of(lp));
      }
      Var objective = ppo_clipped_objective(tape, picked, old, a, cfg_.clip);
      if (epoch == 0) first_objective = objective.scalar();
      if (!entropies.empty()) {
        const Var bonus = scale(sum(concat(entropies)),
                                cfg_.entropy_coef / static_cast<double>(entropies.size()));
        objective = add(objective, bonus);
      }
      tape.backward(scale(objective, -1.0));
      (anchor_head ? anchor_.params() : item_.params()).adam_step(actor_adam);
      encoder_.params().adam_step(actor_adam);
    }
    return first_objective;
  };
  stats.anchor_objective = actor_phase(anchor_steps, true);
  stats.item_objective = actor_phase(item_steps, false);
  return stats;
}

Checkpoint KgAttackAgent::checkpoint() const {
  return checkpoint_of({&encoder_.params(), &anchor_.params(), &item_.params(), &critic_.params()},
                       nlohmann::json{{"kind", "kgattack_agent"}}.dump());
}

void KgAttackAgent::restore(const Checkpoint& ckpt) {
  restore_checkpoint(ckpt,
                     {&encoder_.params(), &anchor_.params(), &item_.params(), &critic_.params()});
}

// ---- outer loop --------------------------------------------------------------

std::string metrics_csv_header() {
  return "episode,reward,HR@k,NDCG@k,critic_loss,anchor_obj,item_obj,fallback_count";
}

std::string metrics_csv_row(const EpisodeRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu", r.episode,
                r.reward, r.hit_ratio, r.ndcg, r.critic_loss, r.anchor_objective,
                r.item_objective, r.fallbacks);
  return buf;
}

AttackTrace run_attack(RecommenderEnv& env, KgAttackAgent& agent, const RunOptions& options) {
  const TrainConfig& cfg = agent.config();
  if (cfg.budget > env.remaining_budget()) {
    throw BudgetError("attack budget " + std::to_string(cfg.budget) +
                      " exceeds the environment's remaining budget " +
                      std::to_string(env.remaining_budget()));
  }
  std::ofstream csv;
  if (!options.metrics_csv.empty()) {
    if (options.metrics_csv.has_parent_path()) {
      std::filesystem::create_directories(options.metrics_csv.parent_path());
    }
    csv.open(options.metrics_csv, std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write " + options.metrics_csv.string());
    if (!options.header_comment.empty()) csv << options.header_comment << '\n';
    csv << metrics_csv_header() << '\n';
  }

  AttackTrace trace;
  ReplayBuffer buffer;
  for (std::size_t ep = 0; ep < cfg.episodes(); ++ep) {
    RolloutResult roll = agent.generate_trajectories(env, env.target(), ep, buffer);
    const UpdateStats stats = agent.update(buffer);
    buffer.clear();
    const RankingMetrics m = env.evaluate(cfg.k);

    EpisodeRecord rec;
    rec.episode = ep;
    rec.reward = roll.reward;
    rec.hit_ratio = m.hit_ratio;
    rec.ndcg = m.ndcg;
    rec.critic_loss = stats.critic_loss;
    rec.anchor_objective = stats.anchor_objective;
    rec.item_objective = stats.item_objective;
    rec.fallbacks = roll.fallbacks;
    for (double x : {rec.critic_loss, rec.anchor_objective, rec.item_objective}) {
      if (!std::isfinite(x)) {
        throw NumericError("non-finite loss in episode " + std::to_string(ep));
      }
    }
    trace.episodes.push_back(rec);
    for (FakeProfile& p : roll.profiles) trace.injected.push_back(std::move(p));
    if (csv.is_open()) csv << metrics_csv_row(rec) << '\n';

    if (options.checkpoint_every > 0 && (ep + 1) % options.checkpoint_every == 0) {
      std::filesystem::create_directories(options.checkpoint_dir);
      save_checkpoint(options.checkpoint_dir / ("agent_ep" + std::to_string(ep + 1) + ".ckpt"),
                      agent.checkpoint());
    }
  }
  return trace;
}

}  // namespace kgattack
