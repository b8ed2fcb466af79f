// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <set>

#include "kgattack/baselines.hpp"
#include "support.hpp"

using namespace kgattack;
using namespace kgattack::testing;

namespace {

/// Items 0..n-1 are entities 0..n-1; item 0 links to attribute n, which
/// links to items 1..reach.
KnowledgeGraph star(std::size_t items, std::size_t reach) {
  std::vector<Triple> t{{0, 0, static_cast<EntityId>(items)}};
  for (std::size_t i = 1; i <= reach; ++i)
    t.push_back({static_cast<EntityId>(items), 0, static_cast<EntityId>(i)});
  std::vector<EntityId> ents(items);
  for (std::size_t i = 0; i < items; ++i) ents[i] = static_cast<EntityId>(i);
  return KnowledgeGraph(items + 1, 1, t, ents);
}

}  // namespace

TEST_CASE("names round trip") {
  for (BaselineKind k :
       {BaselineKind::RandomAttack, BaselineKind::TargetAttack, BaselineKind::TargetAttackKG})
    CHECK(parse_baseline(to_string(k)) == k);
  CHECK(parse_baseline("TargetAttack-KG") == BaselineKind::TargetAttackKG);
  CHECK(!parse_baseline("KGAttack").has_value());
}

TEST_CASE("target attack of length one is the target alone") {
  const KnowledgeGraph g = star(10, 3);
  Rng rng(1);
  const FakeProfile p = generate_baseline_profile(BaselineKind::TargetAttack, 4, g, 1, 2, rng);
  CHECK(p.items == std::vector<ItemId>{4});
}

TEST_CASE("KG baseline with exactly T-1 candidates takes them all") {
  const KnowledgeGraph g = star(20, 4);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const FakeProfile p = generate_baseline_profile(BaselineKind::TargetAttackKG, 0, g, 5, 2, rng);
    REQUIRE(p.size() == 5);
    CHECK(p.items[0] == 0);
    CHECK(std::set<ItemId>(p.items.begin(), p.items.end()) == std::set<ItemId>{0, 1, 2, 3, 4});
  }
}

TEST_CASE("KG baseline tops up small pools with uniform items") {
  const KnowledgeGraph g = star(20, 2);
  Rng rng(3);
  const FakeProfile p = generate_baseline_profile(BaselineKind::TargetAttackKG, 0, g, 6, 2, rng);
  REQUIRE(p.size() == 6);
  CHECK(p.contains(1));
  CHECK(p.contains(2));
  CHECK(!p.has_duplicates());
}

TEST_CASE("KG baseline draws only from the neighborhood when it is large enough") {
  const KnowledgeGraph g = star(40, 12);
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const FakeProfile p = generate_baseline_profile(BaselineKind::TargetAttackKG, 0, g, 6, 2, rng);
    for (std::size_t i = 1; i < p.size(); ++i) {
      CHECK(p.items[i] >= 1);
      CHECK(p.items[i] <= 12);
    }
  }
}

TEST_CASE("random attack is uniform over the item space") {
  const KnowledgeGraph g = star(100, 5);
  Rng rng(7);
  std::vector<double> count(100, 0.0);
  const std::size_t draws = 10000, length = 5;
  for (std::size_t d = 0; d < draws; ++d) {
    const FakeProfile p = generate_baseline_profile(BaselineKind::RandomAttack, 0, g, length, 2, rng);
    for (ItemId v : p.items) count[v] += 1.0;
  }
  // each item lands in a profile with probability length / items
  const double p = static_cast<double>(length) / 100.0;
  const double mean = draws * p, sd = std::sqrt(draws * p * (1 - p));
  std::size_t outside = 0;
  for (double c : count) outside += std::abs(c - mean) > 3 * sd;
  // 3 sigma leaves about 0.27% per item; allow a couple of stragglers out of 100
  CHECK(outside <= 2);
}

TEST_CASE("profiles have exact length, no duplicates and the target first") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t items = 2 + rng.index(60);
    const KnowledgeGraph g = random_graph(rng, items + rng.index(40), items, rng.index(200));
    const ItemId target = static_cast<ItemId>(rng.index(items));
    const std::size_t length = 1 + rng.index(items);
    for (BaselineKind k :
         {BaselineKind::RandomAttack, BaselineKind::TargetAttack, BaselineKind::TargetAttackKG}) {
      const FakeProfile p = generate_baseline_profile(k, target, g, length, 1 + rng.index(3), rng);
      CHECK(p.size() == length);
      CHECK(!p.has_duplicates());
      for (ItemId v : p.items) CHECK(v < items);
      if (k != BaselineKind::RandomAttack) CHECK(p.items[0] == target);
    }
  }
}

TEST_CASE("invalid lengths are rejected") {
  const KnowledgeGraph g = star(5, 2);
  Rng rng(1);
  CHECK_THROWS_AS(generate_baseline_profile(BaselineKind::TargetAttack, 0, g, 0, 2, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_baseline_profile(BaselineKind::RandomAttack, 0, g, 6, 2, rng),
                  std::invalid_argument);
}
