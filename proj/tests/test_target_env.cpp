// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "kgattack/harness.hpp"
#include "kgattack/target_env.hpp"
#include "scripted_model.hpp"
#include "support.hpp"

using namespace kgattack;
using namespace kgattack::testing;

namespace {

struct Fixture {
  InteractionMatrix data;
  ItemId target = 0;
  EnvConfig cfg;
};

Fixture small_world(std::uint64_t seed, AttackMode mode) {
  SyntheticSpec spec;
  spec.user_count = 200;
  spec.item_count = 120;
  spec.non_item_entity_count = 100;
  spec.seed = seed;
  Fixture f;
  f.data = generate_synthetic(spec).interactions();
  f.cfg.mode = mode;
  f.cfg.spy_users = 20;
  f.cfg.normal_users = 60;
  f.cfg.candidate_list_size = 50;
  f.cfg.k = 10;
  f.cfg.budget = 40;
  f.cfg.mf.epochs = 10;
  f.cfg.seed = seed;
  f.cfg.mf.seed = seed;
  f.target = choose_target(f.data, 10, f.cfg.spy_users, seed);
  return f;
}

std::size_t rank_of(const std::vector<ItemId>& ranked, ItemId v) {
  return static_cast<std::size_t>(std::find(ranked.begin(), ranked.end(), v) - ranked.begin()) + 1;
}

InteractionMatrix two_by_two() {
  InteractionMatrix y(2);
  y.add_user({0});
  y.add_user({1});
  y.seal();
  return y;
}

}  // namespace

TEST_CASE("interaction matrix sorts rows and rejects out-of-range items") {
  InteractionMatrix y(5);
  CHECK(y.add_user({3, 1, 3}) == 0);
  CHECK(std::vector<ItemId>(y.items_of(0).begin(), y.items_of(0).end()) ==
        std::vector<ItemId>{1, 3});
  CHECK(y.has(0, 3));
  CHECK(!y.has(0, 2));
  CHECK_THROWS_AS(y.add_user({5}), ValidationError);
  CHECK(y.item_degrees() == std::vector<std::size_t>{0, 1, 0, 1, 0});
}

TEST_CASE("MF separates two users with disjoint tastes") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    MfConfig cfg;
    cfg.epochs = 200;
    cfg.seed = seed;
    const MfModel m = train_mf(two_by_two(), cfg);
    CHECK(m.score(0, 0) > m.score(0, 1));
    CHECK(m.score(1, 1) > m.score(1, 0));
  }
}

TEST_CASE("MF is deterministic per seed and rejects empty data") {
  const Fixture f = small_world(3, AttackMode::Poison);
  const MfModel a = train_mf(f.data, f.cfg.mf);
  const MfModel b = train_mf(f.data, f.cfg.mf);
  CHECK(std::memcmp(a.users.values().data(), b.users.values().data(),
                    a.users.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(a.items.values().data(), b.items.values().data(),
                    a.items.size() * sizeof(double)) == 0);
  InteractionMatrix empty(3);
  CHECK_THROWS_AS(train_mf(empty, {}), ValidationError);
  empty.add_user({});
  CHECK_THROWS_AS(train_mf(empty, {}), ValidationError);
}

TEST_CASE("untrained zero-initialized MF scores everything equally") {
  MfConfig cfg;
  cfg.epochs = 0;
  cfg.init_scale = 0.0;
  const MfModel m = train_mf(two_by_two(), cfg);
  for (UserId u = 0; u < 2; ++u)
    for (ItemId v = 0; v < 2; ++v) CHECK(m.score(u, v) == 0.0);
}

TEST_CASE("frozen target without injections ranks like plain MF") {
  Fixture f = small_world(4, AttackMode::Evasion);
  RecommenderEnv env(f.data, f.target, f.cfg);
  const MfModel plain = train_mf(env.interactions(), f.cfg.mf);
  for (UserId u : env.spy_users()) {
    const auto list = env.candidates(u);
    std::vector<ItemId> want(list.begin(), list.end());
    std::stable_sort(want.begin(), want.end(), [&](ItemId a, ItemId b) {
      return plain.score(u, a) > plain.score(u, b);
    });
    want.resize(f.cfg.k);
    CHECK(env.top_k(u, f.cfg.k) == want);
  }
}

TEST_CASE("fold-in of a one-item profile is that item's factor") {
  Fixture f = small_world(5, AttackMode::Evasion);
  f.cfg.cooc_lambda = 0.0;
  RecommenderEnv env(f.data, f.target, f.cfg);
  const std::vector<FakeProfile> p{FakeProfile(std::vector<ItemId>{7})};
  env.inject(p);
  (void)env.query_reward(f.target);  // refreshes the model
  const auto& frozen = dynamic_cast<const FrozenMfTarget&>(env.model());
  const auto vec = frozen.user_vector(static_cast<UserId>(env.interactions().user_count() - 1));
  const auto q = frozen.model().items.row(7);
  for (std::size_t i = 0; i < vec.size(); ++i) CHECK(vec[i] == q[i]);
}

TEST_CASE("co-occurrence injections lift the target for a spy") {
  std::size_t lifted = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Fixture f = small_world(seed, AttackMode::Evasion);
    RecommenderEnv env(f.data, f.target, f.cfg);
    const UserId spy = env.spy_users()[0];
    const auto spy_items = env.interactions().items_of(spy);
    // the spy's most popular item
    const auto deg = env.interactions().item_degrees();
    const ItemId w = *std::max_element(spy_items.begin(), spy_items.end(),
                                       [&](ItemId a, ItemId b) { return deg[a] < deg[b]; });
    const std::size_t before = rank_of(env.ranked_candidates(spy), f.target);
    std::vector<FakeProfile> profiles(20, FakeProfile(std::vector<ItemId>{f.target, w}));
    env.inject(profiles);
    const std::size_t after = rank_of(env.ranked_candidates(spy), f.target);
    INFO("seed " << seed << ": " << before << " -> " << after);
    lifted += after < before;
  }
  CHECK(lifted >= 4);
}

TEST_CASE("injection grows the user count and enforces the budget") {
  Fixture f = small_world(6, AttackMode::Poison);
  f.cfg.budget = 4;
  RecommenderEnv env(f.data, f.target, f.cfg);
  const std::size_t users = env.interactions().user_count();
  std::vector<FakeProfile> three(3, FakeProfile(std::vector<ItemId>{f.target}));
  env.inject(three);
  CHECK(env.interactions().user_count() == users + 3);
  CHECK(env.remaining_budget() == 1);
  CHECK_THROWS_AS(env.inject(std::vector<FakeProfile>(2, FakeProfile(f.target))), BudgetError);
  CHECK(env.interactions().user_count() == users + 3);
  std::vector<ItemId> long_profile;
  for (ItemId v = 0; v < 10; ++v) long_profile.push_back(v);
  CHECK_THROWS_AS(env.inject(std::vector<FakeProfile>{FakeProfile(long_profile)}), ValidationError);
}

TEST_CASE("poisoning with target-bearing profiles changes a spy list") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Fixture f = small_world(seed, AttackMode::Poison);
    RecommenderEnv env(f.data, f.target, f.cfg);
    std::vector<std::vector<ItemId>> before;
    for (UserId u : env.spy_users()) before.push_back(env.top_k(u, f.cfg.k));
    Rng rng(seed);
    std::vector<FakeProfile> profiles;
    for (int i = 0; i < 9; ++i) {
      FakeProfile p(f.target);
      while (p.size() < 5) {
        const ItemId v = static_cast<ItemId>(rng.index(env.item_count()));
        if (!p.contains(v)) p.append(v);
      }
      profiles.push_back(p);
    }
    env.inject(profiles);
    bool changed = false;
    for (std::size_t i = 0; i < before.size(); ++i)
      changed |= env.top_k(env.spy_users()[i], f.cfg.k) != before[i];
    INFO("seed " << seed);
    CHECK(changed);
  }
}

TEST_CASE("environment users respect the protocol") {
  Fixture f = small_world(7, AttackMode::Poison);
  RecommenderEnv env(f.data, f.target, f.cfg);
  CHECK(env.spy_users().size() == f.cfg.spy_users);
  CHECK(env.normal_users().size() == f.cfg.normal_users);
  std::vector<UserId> all(env.spy_users().begin(), env.spy_users().end());
  all.insert(all.end(), env.normal_users().begin(), env.normal_users().end());
  std::sort(all.begin(), all.end());
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
  for (UserId u : all) {
    CHECK(u < env.interactions().original_user_count());
    CHECK(!env.interactions().has(u, f.target));
    const auto list = env.candidates(u);
    CHECK(list.size() == f.cfg.candidate_list_size);
    CHECK(std::count(list.begin(), list.end(), f.target) == 1);
    for (ItemId v : list) CHECK((v == f.target || !env.interactions().has(u, v)));
    const auto top = env.top_k(u, f.cfg.k);
    CHECK(top.size() == std::min(f.cfg.k, list.size()));
    CHECK(std::set<ItemId>(top.begin(), top.end()).size() == top.size());
  }
}

TEST_CASE("forced extreme target scores give reward one and zero") {
  Fixture f = small_world(8, AttackMode::Poison);
  auto owned = std::make_unique<ScriptedModel>();
  ScriptedModel* model = owned.get();
  RecommenderEnv env(f.data, f.target, f.cfg, std::move(owned));
  const ItemId target = f.target;
  model->fn = [target](UserId, ItemId v) { return v == target ? 1e300 : 0.0; };
  CHECK(env.query_reward(target).reward == 1.0);
  model->fn = [target](UserId, ItemId v) { return v == target ? -1e300 : 0.0; };
  CHECK(env.query_reward(target).reward == 0.0);
  const ItemId absent = env.interactions().items_of(env.spy_users()[0])[0];
  CHECK_THROWS_AS(env.query_reward(absent), ValidationError);
}

TEST_CASE("reward equals a sort-and-count oracle under random scores") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Fixture f = small_world(9, AttackMode::Poison);
    f.cfg.spy_users = 50;
    f.cfg.normal_users = 10;
    auto owned = std::make_unique<ScriptedModel>();
    ScriptedModel* model = owned.get();
    RecommenderEnv env(f.data, f.target, f.cfg, std::move(owned));
    // coarse integer scores so ties are frequent
    model->fn = [seed](UserId u, ItemId v) {
      Rng r = Rng::derive({seed, u, v});
      return static_cast<double>(r.index(8));
    };
    std::size_t hits = 0;
    for (UserId u : env.spy_users()) {
      const auto list = env.candidates(u);
      const double st = model->fn(u, f.target);
      std::size_t ahead = 0;
      for (ItemId v : list) {
        const double s = model->fn(u, v);
        if (v != f.target && (s > st || (s == st && v < f.target))) ++ahead;
      }
      hits += ahead < f.cfg.k;
    }
    const RewardRecord rec = env.query_reward(f.target);
    CHECK(rec.reward == static_cast<double>(hits) / 50.0);
    CHECK(rec.hits.size() == 50);
    std::size_t bits = 0;
    for (auto b : rec.hits) bits += b;
    CHECK(bits == hits);
  }
}

TEST_CASE("HR and NDCG at the extremes and at rank three") {
  Fixture f = small_world(10, AttackMode::Poison);
  f.cfg.k = 20;
  f.cfg.normal_users = 40;
  auto owned = std::make_unique<ScriptedModel>();
  ScriptedModel* model = owned.get();
  RecommenderEnv env(f.data, f.target, f.cfg, std::move(owned));
  const ItemId target = f.target;

  model->fn = [target](UserId, ItemId v) { return v == target ? 1.0 : 0.0; };
  RankingMetrics m = env.evaluate(20);
  CHECK(m.hit_ratio == 1.0);
  CHECK(m.ndcg == 1.0);
  CHECK(m.users == 40);

  // Target at rank k+1: exactly k items above it.
  model->fn = [&env, target](UserId u, ItemId v) {
    if (v == target) return 0.0;
    const auto list = env.candidates(u);
    std::size_t pos = 0;
    for (ItemId w : list) {
      if (w == target) continue;
      if (w == v) break;
      ++pos;
    }
    return pos < 20 ? 1.0 : -1.0;
  };
  m = env.evaluate(20);
  CHECK(m.hit_ratio == 0.0);
  CHECK(m.ndcg == 0.0);

  // Half the users see the target third, the rest see it last.
  const std::set<UserId> half(env.normal_users().begin(), env.normal_users().begin() + 20);
  model->fn = [&env, &half, target](UserId u, ItemId v) {
    if (v == target) return half.count(u) ? 0.0 : -2.0;
    const auto list = env.candidates(u);
    std::size_t pos = 0;
    for (ItemId w : list) {
      if (w == target) continue;
      if (w == v) break;
      ++pos;
    }
    return pos < 2 ? 1.0 : -1.0;
  };
  m = env.evaluate(20);
  CHECK(m.hit_ratio == 0.5);
  CHECK(m.ndcg == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("rewards lie on the spy-count lattice") {
  Fixture f = small_world(11, AttackMode::Poison);
  RecommenderEnv env(f.data, f.target, f.cfg);
  Rng rng(11);
  for (int round = 0; round < 5; ++round) {
    const double r = env.query_reward(f.target).reward;
    const double n = static_cast<double>(f.cfg.spy_users);
    CHECK(r == std::round(r * n) / n);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
    FakeProfile p(f.target);
    p.append(static_cast<ItemId>((f.target + 1 + rng.index(50)) % env.item_count()));
    env.inject(std::vector<FakeProfile>(3, p));
  }
}

TEST_CASE("injections never touch pre-attack rows") {
  Fixture f = small_world(12, AttackMode::Poison);
  RecommenderEnv env(f.data, f.target, f.cfg);
  InteractionMatrix clean = f.data;
  clean.seal();
  env.inject(std::vector<FakeProfile>(6, FakeProfile(std::vector<ItemId>{f.target, 3})));
  (void)env.query_reward(f.target);
  env.inject(std::vector<FakeProfile>(6, FakeProfile(std::vector<ItemId>{f.target, 4})));
  CHECK(env.interactions().original_user_count() == clean.user_count());
  for (UserId u = 0; u < clean.user_count(); ++u) {
    const auto a = env.interactions().items_of(u);
    const auto b = clean.items_of(u);
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
}

TEST_CASE("poison retraining from the same data is deterministic") {
  Fixture f = small_world(13, AttackMode::Poison);
  RecommenderEnv a(f.data, f.target, f.cfg);
  RecommenderEnv b(f.data, f.target, f.cfg);
  const std::vector<FakeProfile> p(3, FakeProfile(std::vector<ItemId>{f.target, 2, 5}));
  a.inject(p);
  b.inject(p);
  const RewardRecord ra = a.query_reward(f.target);
  const RewardRecord rb = b.query_reward(f.target);
  CHECK(ra.hits == rb.hits);
  const auto& ma = dynamic_cast<const RetrainedMfTarget&>(a.model()).model();
  const auto& mb = dynamic_cast<const RetrainedMfTarget&>(b.model()).model();
  CHECK(std::memcmp(ma.items.values().data(), mb.items.values().data(),
                    ma.items.size() * sizeof(double)) == 0);
}

TEST_CASE("snapshots restore data, users, candidates and scores") {
  for (AttackMode mode : {AttackMode::Poison, AttackMode::Evasion}) {
    Fixture f = small_world(14, mode);
    RecommenderEnv env(f.data, f.target, f.cfg);
    env.inject(std::vector<FakeProfile>(3, FakeProfile(std::vector<ItemId>{f.target, 9})));
    const RewardRecord before = env.query_reward(f.target);
    const auto dir = std::filesystem::temp_directory_path() / "kgattack_tests" / "snapshot";
    std::filesystem::remove_all(dir);
    env.save_snapshot(dir);
    RecommenderEnv back = RecommenderEnv::load_snapshot(dir);
    CHECK(back.interactions() == env.interactions());
    CHECK(back.injected() == env.injected());
    CHECK(std::equal(back.spy_users().begin(), back.spy_users().end(), env.spy_users().begin(),
                     env.spy_users().end()));
    for (UserId u : env.spy_users()) {
      CHECK(std::ranges::equal(back.candidates(u), env.candidates(u)));
      for (ItemId v : env.candidates(u)) CHECK(back.model().score(u, v) == env.model().score(u, v));
    }
    CHECK(back.query_reward(f.target).hits == before.hits);
  }
}

TEST_CASE("interaction files round trip through the item map") {
  SyntheticSpec spec;
  spec.user_count = 30;
  spec.item_count = 20;
  spec.non_item_entity_count = 20;
  const SyntheticData data = generate_synthetic(spec);
  const auto dir = std::filesystem::temp_directory_path() / "kgattack_tests" / "interactions";
  const DataFiles files = write_synthetic(data, dir);
  const KnowledgeGraph g = load_kg(files.triples, files.item_map);
  const InteractionMatrix y = load_interactions(files.interactions, g);
  CHECK(y == data.interactions());
}
