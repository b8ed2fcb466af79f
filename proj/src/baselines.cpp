// SPDX-License-Identifier: Apache-2.0
#include "kgattack/baselines.hpp"

#include <stdexcept>

namespace kgattack {

std::string to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::RandomAttack: return "RandomAttack";
    case BaselineKind::TargetAttack: return "TargetAttack";
    case BaselineKind::TargetAttackKG: return "TargetAttackKG";
  }
  return "unknown";
}

std::optional<BaselineKind> parse_baseline(const std::string& name) {
  if (name == "RandomAttack") return BaselineKind::RandomAttack;
  if (name == "TargetAttack") return BaselineKind::TargetAttack;
  if (name == "TargetAttackKG" || name == "TargetAttack-KG") return BaselineKind::TargetAttackKG;
  return std::nullopt;
}

namespace {

// Uniform items not yet in the profile until it reaches `length`.
void fill_uniform(FakeProfile& p, std::size_t item_count, std::size_t length, Rng& rng) {
  while (p.size() < length) {
    const auto v = static_cast<ItemId>(rng.index(item_count));
    if (!p.contains(v)) p.append(v);
  }
}

}  // namespace

FakeProfile generate_baseline_profile(BaselineKind kind, ItemId target, const KnowledgeGraph& g,
                                      std::size_t length, std::size_t hops, Rng& rng) {
  const std::size_t n = g.item_count();
  if (n == 0) throw std::invalid_argument("baseline: empty item space");
  if (length == 0 || length > n) {
    throw std::invalid_argument("baseline: profile length " + std::to_string(length) +
                                " outside [1, " + std::to_string(n) + "]");
  }
  if (target >= n) throw ValidationError("baseline: target item out of range");

  FakeProfile p;
  switch (kind) {
    case BaselineKind::RandomAttack:
      fill_uniform(p, n, length, rng);
      break;
    case BaselineKind::TargetAttack:
      p.append(target);
      fill_uniform(p, n, length, rng);
      break;
    case BaselineKind::TargetAttackKG: {
      p.append(target);
      if (length > 1) {
        if (const auto pool = candidate_pool(g, target, hops, length - 1, rng)) {
          for (ItemId v : *pool) p.append(v);
        }
      }
      fill_uniform(p, n, length, rng);
      break;
    }
  }
  return p;
}

}  // namespace kgattack
