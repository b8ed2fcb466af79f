// SPDX-License-Identifier: Apache-2.0
#include "kgattack/kg_store.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace kgattack {

KnowledgeGraph::KnowledgeGraph(std::size_t entity_count, std::size_t relation_count,
                               std::vector<Triple> triples, std::vector<EntityId> item_entities)
    : entity_count_(entity_count),
      relation_count_(relation_count),
      triples_(std::move(triples)),
      item_entities_(std::move(item_entities)) {
  for (const Triple& t : triples_) {
    if (t.head >= entity_count_ || t.tail >= entity_count_) {
      throw ValidationError("triple references entity outside [0, " +
                            std::to_string(entity_count_) + ")");
    }
    if (t.relation >= relation_count_) {
      throw ValidationError("triple references relation " + std::to_string(t.relation) +
                            " >= relation_count " + std::to_string(relation_count_));
    }
  }
  std::sort(triples_.begin(), triples_.end());
  const auto last = std::unique(triples_.begin(), triples_.end());
  duplicates_dropped_ = static_cast<std::size_t>(triples_.end() - last);
  triples_.erase(last, triples_.end());

  offsets_.assign(entity_count_ + 1, 0);
  for (const Triple& t : triples_) ++offsets_[t.head + 1];
  for (std::size_t i = 0; i < entity_count_; ++i) offsets_[i + 1] += offsets_[i];
  edges_.resize(triples_.size());
  // triples_ is sorted by head, so a single pass fills the CSR in order.
  for (std::size_t i = 0; i < triples_.size(); ++i) {
    edges_[i] = Edge{triples_[i].relation, triples_[i].tail};
  }

  entity_item_.assign(entity_count_, -1);
  for (std::size_t i = 0; i < item_entities_.size(); ++i) {
    const EntityId e = item_entities_[i];
    if (e >= entity_count_) {
      throw ValidationError("item " + std::to_string(i) + " maps to unknown entity " +
                            std::to_string(e));
    }
    if (entity_item_[e] != -1) {
      throw ValidationError("entity " + std::to_string(e) + " is mapped by two items");
    }
    entity_item_[e] = static_cast<std::int64_t>(i);
  }
}

std::span<const Edge> KnowledgeGraph::out_edges(EntityId e) const {
  if (e >= entity_count_) throw ValidationError("unknown entity " + std::to_string(e));
  return {edges_.data() + offsets_[e], offsets_[e + 1] - offsets_[e]};
}

bool KnowledgeGraph::contains(const Triple& t) const {
  return std::binary_search(triples_.begin(), triples_.end(), t);
}

EntityId KnowledgeGraph::entity_of(ItemId item) const {
  if (item >= item_entities_.size()) {
    throw ValidationError("item " + std::to_string(item) + " has no KG entity");
  }
  return item_entities_[item];
}

std::optional<ItemId> KnowledgeGraph::item_of(EntityId entity) const {
  if (entity >= entity_count_ || entity_item_[entity] < 0) return std::nullopt;
  return static_cast<ItemId>(entity_item_[entity]);
}

std::optional<ItemId> KnowledgeGraph::item_by_name(const std::string& raw) const {
  if (auto it = item_index_.find(raw); it != item_index_.end()) return it->second;
  return std::nullopt;
}

KnowledgeGraph KnowledgeGraph::symmetrized() const {
  std::vector<Triple> both = triples_;
  both.reserve(triples_.size() * 2);
  for (const Triple& t : triples_) both.push_back({t.tail, t.relation, t.head});
  KnowledgeGraph out(entity_count_, relation_count_, std::move(both), item_entities_);
  out.duplicates_dropped_ = duplicates_dropped_;
  out.entity_names_ = entity_names_;
  out.item_names_ = item_names_;
  out.item_index_ = item_index_;
  return out;
}

// ---- loading --------------------------------------------------------------

namespace {

struct RawLine {
  std::size_t line_no;
  std::vector<std::string> fields;
};

std::vector<RawLine> read_tsv(const std::filesystem::path& path, std::size_t expected_fields) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<RawLine> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    RawLine row{line_no, {}};
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      row.fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (row.fields.size() != expected_fields ||
        std::any_of(row.fields.begin(), row.fields.end(),
                    [](const std::string& f) { return f.empty(); })) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(expected_fields) + " tab-separated fields");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

bool parse_int(const std::string& s, long long& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && ptr == e;
}

}  // namespace

std::vector<std::string> dense_token_order(std::vector<std::string> tokens) {
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  bool numeric = true;
  std::vector<long long> values(tokens.size());
  for (std::size_t i = 0; i < tokens.size() && numeric; ++i) numeric = parse_int(tokens[i], values[i]);
  if (numeric) {
    std::vector<std::size_t> order(tokens.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<std::string> sorted;
    sorted.reserve(tokens.size());
    for (std::size_t i : order) sorted.push_back(tokens[i]);
    return sorted;
  }
  return tokens;
}

KnowledgeGraph load_kg(const std::filesystem::path& triple_file,
                       const std::filesystem::path& item_map_file) {
  const auto triple_rows = read_tsv(triple_file, 3);
  const auto item_rows = read_tsv(item_map_file, 2);

  std::vector<std::string> entity_tokens, relation_tokens, item_tokens;
  for (const auto& r : triple_rows) {
    entity_tokens.push_back(r.fields[0]);
    relation_tokens.push_back(r.fields[1]);
    entity_tokens.push_back(r.fields[2]);
  }
  for (const auto& r : item_rows) item_tokens.push_back(r.fields[0]);

  auto entities = dense_token_order(entity_tokens);
  const auto relations = dense_token_order(relation_tokens);
  const auto items = dense_token_order(item_tokens);

  std::unordered_map<std::string, EntityId> entity_id;
  for (std::size_t i = 0; i < entities.size(); ++i) entity_id.emplace(entities[i], i);
  std::unordered_map<std::string, RelationId> relation_id;
  for (std::size_t i = 0; i < relations.size(); ++i) relation_id.emplace(relations[i], i);
  std::unordered_map<std::string, ItemId> item_id;
  for (std::size_t i = 0; i < items.size(); ++i) item_id.emplace(items[i], i);

  std::vector<Triple> triples;
  triples.reserve(triple_rows.size());
  for (const auto& r : triple_rows) {
    triples.push_back({entity_id.at(r.fields[0]), relation_id.at(r.fields[1]),
                       entity_id.at(r.fields[2])});
  }

  std::vector<EntityId> item_entities(items.size());
  std::vector<bool> seen(items.size(), false);
  for (const auto& r : item_rows) {
    const ItemId item = item_id.at(r.fields[0]);
    const auto it = entity_id.find(r.fields[1]);
    if (it == entity_id.end()) {
      throw ValidationError(item_map_file.string() + ":" + std::to_string(r.line_no) +
                            ": item " + r.fields[0] + " maps to entity " + r.fields[1] +
                            " which does not occur in the triple file");
    }
    if (seen[item] && item_entities[item] != it->second) {
      throw ValidationError(item_map_file.string() + ":" + std::to_string(r.line_no) +
                            ": item " + r.fields[0] + " mapped twice");
    }
    seen[item] = true;
    item_entities[item] = it->second;
  }

  KnowledgeGraph g(entities.size(), relations.size(), std::move(triples), std::move(item_entities));
  g.entity_names_ = std::move(entities);
  g.item_names_ = items;
  for (std::size_t i = 0; i < items.size(); ++i) g.item_index_.emplace(items[i], i);
  return g;
}

// ---- neighborhood queries -------------------------------------------------

std::vector<std::vector<EntityId>> hop_expand(const KnowledgeGraph& g,
                                              std::span<const EntityId> seeds, std::size_t hops) {
  if (hops == 0) throw std::invalid_argument("hop_expand: hops must be >= 1");
  std::vector<EntityId> frontier(seeds.begin(), seeds.end());
  for (EntityId e : frontier) {
    if (e >= g.entity_count()) throw ValidationError("hop_expand: unknown seed entity " + std::to_string(e));
  }
  std::vector<std::vector<EntityId>> layers;
  layers.reserve(hops);
  std::vector<char> mark(g.entity_count(), 0);
  for (std::size_t h = 0; h < hops; ++h) {
    std::vector<EntityId> next;
    for (EntityId p : frontier) {
      for (const Edge& edge : g.out_edges(p)) {
        if (!mark[edge.tail]) {
          mark[edge.tail] = 1;
          next.push_back(edge.tail);
        }
      }
    }
    for (EntityId e : next) mark[e] = 0;
    std::sort(next.begin(), next.end());
    layers.push_back(next);
    frontier = std::move(next);
  }
  return layers;
}

std::vector<ItemId> candidate_set(const KnowledgeGraph& g, ItemId anchor, std::size_t hops) {
  const EntityId anchor_entity = g.entity_of(anchor);
  const EntityId seed[] = {anchor_entity};
  std::vector<ItemId> out;
  std::vector<char> taken(g.item_count(), 0);
  for (const auto& layer : hop_expand(g, seed, hops)) {
    for (EntityId e : layer) {
      if (e == anchor_entity) continue;
      if (auto item = g.item_of(e); item && !taken[*item]) {
        taken[*item] = 1;
        out.push_back(*item);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<std::vector<ItemId>> candidate_pool(const KnowledgeGraph& g, ItemId anchor,
                                                  std::size_t hops, std::size_t pool_size,
                                                  Rng& rng) {
  if (pool_size == 0) throw std::invalid_argument("candidate_pool: pool_size must be >= 1");
  auto all = candidate_set(g, anchor, hops);
  if (all.empty()) return std::nullopt;
  if (all.size() <= pool_size) return all;
  std::vector<ItemId> picked;
  picked.reserve(pool_size);
  for (std::size_t idx : rng.sample_without_replacement(all.size(), pool_size)) {
    picked.push_back(all[idx]);
  }
  return picked;
}

}  // namespace kgattack
