// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "kgattack/kg_store.hpp"

namespace kgattack {

/// Ordered item sequence of one fake user. Attacker-built profiles start
/// with the target item and never repeat an item.
struct FakeProfile {
  std::vector<ItemId> items;

  FakeProfile() = default;
  explicit FakeProfile(ItemId target) : items{target} {}
  explicit FakeProfile(std::vector<ItemId> list) : items(std::move(list)) {}

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  ItemId target() const {
    if (items.empty()) throw std::logic_error("empty fake profile");
    return items.front();
  }
  bool contains(ItemId item) const {
    return std::find(items.begin(), items.end(), item) != items.end();
  }
  void append(ItemId item) {
    if (contains(item)) throw std::logic_error("fake profile already contains item");
    items.push_back(item);
  }
  bool has_duplicates() const {
    std::vector<ItemId> sorted = items;
    std::sort(sorted.begin(), sorted.end());
    return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
  }
};

}  // namespace kgattack
