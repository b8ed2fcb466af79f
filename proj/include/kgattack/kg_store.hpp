// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgattack/random.hpp"

namespace kgattack {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;
using ItemId = std::uint32_t;
using UserId = std::uint32_t;

/// Malformed input file; carries the offending file and line.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Referential-integrity or precondition violation on graph data.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  auto operator<=>(const Triple&) const = default;
};

struct Edge {
  RelationId relation = 0;
  EntityId tail = 0;
};

/// Immutable, head-indexed triple store with an item <-> entity mapping.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  /// Deduplicates `triples`, validates ids against the declared counts and
  /// builds the out-adjacency index. `item_entities[i]` is the entity of item i.
  KnowledgeGraph(std::size_t entity_count, std::size_t relation_count,
                 std::vector<Triple> triples, std::vector<EntityId> item_entities);

  std::size_t entity_count() const { return entity_count_; }
  std::size_t relation_count() const { return relation_count_; }
  std::size_t item_count() const { return item_entities_.size(); }
  std::size_t duplicates_dropped() const { return duplicates_dropped_; }

  /// Sorted, duplicate-free triples.
  std::span<const Triple> triples() const { return triples_; }
  std::span<const Edge> out_edges(EntityId e) const;
  bool contains(const Triple& t) const;

  EntityId entity_of(ItemId item) const;
  std::optional<ItemId> item_of(EntityId entity) const;
  bool is_item(EntityId entity) const { return item_of(entity).has_value(); }

  /// Copy with every edge also present in the reverse direction.
  KnowledgeGraph symmetrized() const;

  /// Raw file tokens, populated by load_kg (empty when built in memory).
  const std::vector<std::string>& entity_names() const { return entity_names_; }
  const std::vector<std::string>& item_names() const { return item_names_; }
  /// Dense item id of a raw item token from the item-map file.
  std::optional<ItemId> item_by_name(const std::string& raw) const;

 private:
  friend KnowledgeGraph load_kg(const std::filesystem::path&, const std::filesystem::path&);

  std::size_t entity_count_ = 0;
  std::size_t relation_count_ = 0;
  std::vector<Triple> triples_;
  std::vector<std::size_t> offsets_;  // CSR: entity_count + 1
  std::vector<Edge> edges_;
  std::vector<EntityId> item_entities_;
  std::vector<std::int64_t> entity_item_;  // -1 when not an item
  std::size_t duplicates_dropped_ = 0;
  std::vector<std::string> entity_names_;
  std::vector<std::string> item_names_;
  std::unordered_map<std::string, ItemId> item_index_;
};

/// Distinct raw tokens in dense-id order: numeric order when every token is
/// an integer, lexical order otherwise.
std::vector<std::string> dense_token_order(std::vector<std::string> tokens);

/// Reads a `head<TAB>relation<TAB>tail` triple file and an
/// `item_id<TAB>entity_id` item-map file (both allow `#` comment lines).
/// Raw tokens are remapped to dense ids; when all tokens of a kind are
/// integers the numeric order is kept, otherwise lexical order is used.
KnowledgeGraph load_kg(const std::filesystem::path& triple_file,
                       const std::filesystem::path& item_map_file);

/// Layered expansion: layer h holds the tails of all edges leaving layer
/// h-1, with layer 0 = `seeds`. Each layer is sorted and duplicate-free.
std::vector<std::vector<EntityId>> hop_expand(const KnowledgeGraph& g,
                                              std::span<const EntityId> seeds, std::size_t hops);

/// Items reachable in 1..hops steps from `anchor`, anchor excluded, sorted.
std::vector<ItemId> candidate_set(const KnowledgeGraph& g, ItemId anchor, std::size_t hops);

/// Fixed-size candidate pool around `anchor`: the candidate set, uniformly
/// subsampled to `pool_size` when larger. Returns nullopt when the set is
/// empty ("no candidates").
std::optional<std::vector<ItemId>> candidate_pool(const KnowledgeGraph& g, ItemId anchor,
                                                  std::size_t hops, std::size_t pool_size,
                                                  Rng& rng);

}  // namespace kgattack
