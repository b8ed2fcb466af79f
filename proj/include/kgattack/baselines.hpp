// SPDX-License-Identifier: Apache-2.0
//
// Non-learning reference attackers sharing the inject/query interface.
#pragma once

#include <optional>
#include <string>

#include "kgattack/kg_store.hpp"
#include "kgattack/profile.hpp"
#include "kgattack/random.hpp"

namespace kgattack {

enum class BaselineKind { RandomAttack, TargetAttack, TargetAttackKG };

std::string to_string(BaselineKind kind);
/// Accepts "RandomAttack", "TargetAttack", "TargetAttackKG" (also
/// "TargetAttack-KG"); nullopt otherwise.
std::optional<BaselineKind> parse_baseline(const std::string& name);

/// Profile of exactly `length` distinct items.
///   RandomAttack   : uniform items from the whole item space.
///   TargetAttack   : the target first, then uniform items.
///   TargetAttackKG : the target first, then uniform draws from the target's
///                    `hops`-hop KG candidates, topped up with uniform items
///                    when there are too few.
/// Throws std::invalid_argument when `length` is 0 or exceeds the item count.
FakeProfile generate_baseline_profile(BaselineKind kind, ItemId target, const KnowledgeGraph& g,
                                      std::size_t length, std::size_t hops, Rng& rng);

}  // namespace kgattack
