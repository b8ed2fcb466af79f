// SPDX-License-Identifier: Apache-2.0
//
// Oracles and helpers shared by the unit tests and the acceptance binary.
// Everything here is computed from first principles and deliberately avoids
// the library code paths it is used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <utility>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "kgattack/autodiff.hpp"
#include "kgattack/kg_store.hpp"
#include "kgattack/parameters.hpp"
#include "kgattack/random.hpp"

namespace kgattack::testing {

// ---- finite differences -------------------------------------------------------

struct GradCheck {
  /// |g_analytic - g_numeric|_2 / max(|g_analytic|_2, |g_numeric|_2, 1e-7)
  /// over all scalars of the layer.
  double relative_error = 0.0;
  /// Same ratio for the single worst parameter tensor.
  double worst_tensor_error = 0.0;
  std::string worst_tensor;
  std::size_t entries = 0;
};

/// Builds the loss on a fresh tape for every evaluation.
using LossFn = std::function<Var(Tape&)>;

/// Central differences over every scalar of every parameter in `sets`,
/// compared with one backward pass.
inline GradCheck gradient_check(const std::vector<ParameterSet*>& sets, const LossFn& loss,
                                double step = 1e-5) {
  for (ParameterSet* s : sets) s->zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  GradCheck out;
  auto ratio = [](double d2, double a2, double n2) {
    return std::sqrt(d2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-7});
  };
  double all_d2 = 0.0, all_a2 = 0.0, all_n2 = 0.0;
  for (ParameterSet* s : sets) {
    for (auto& holder : *s) {
      Parameter& p = *holder;
      Matrix analytic = p.grad_populated ? p.grad : Matrix(p.value.rows(), p.value.cols());
      double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double keep = p.value[i];
        p.value[i] = keep + step;
        double up = 0.0, down = 0.0;
        {
          Tape t;
          up = loss(t).scalar();
        }
        p.value[i] = keep - step;
        {
          Tape t;
          down = loss(t).scalar();
        }
        p.value[i] = keep;
        const double numeric = (up - down) / (2.0 * step);
        diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
        a2 += analytic[i] * analytic[i];
        n2 += numeric * numeric;
        ++out.entries;
      }
      all_d2 += diff2;
      all_a2 += a2;
      all_n2 += n2;
      const double rel = ratio(diff2, a2, n2);
      if (rel >= out.worst_tensor_error) {
        out.worst_tensor_error = rel;
        out.worst_tensor = p.name;
      }
    }
  }
  out.relative_error = ratio(all_d2, all_a2, all_n2);
  for (ParameterSet* s : sets) s->zero_grad();
  return out;
}

inline void randomize(ParameterSet& set, Rng& rng, double scale = 1.0) {
  for (auto& p : set)
    for (double& v : p->value.values()) v = rng.uniform(-scale, scale);
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-scale, scale);
  return m;
}

// ---- graphs -----------------------------------------------------------------------

/// Random KG with `n` entities, of which the first `items` are items.
inline KnowledgeGraph random_graph(Rng& rng, std::size_t n, std::size_t items,
                                   std::size_t edges, std::size_t relations = 3) {
  std::vector<Triple> triples;
  for (std::size_t k = 0; k < edges; ++k) {
    triples.push_back({static_cast<EntityId>(rng.index(n)),
                       static_cast<RelationId>(rng.index(relations)),
                       static_cast<EntityId>(rng.index(n))});
  }
  std::vector<EntityId> item_entities(items);
  for (std::size_t i = 0; i < items; ++i) item_entities[i] = static_cast<EntityId>(i);
  return KnowledgeGraph(n, relations, std::move(triples), std::move(item_entities));
}

/// Layer h = { tail | (head, r, tail) in triples, head in layer h-1 },
/// scanning the raw triple list once per hop.
inline std::vector<std::set<EntityId>> layered_oracle(const std::vector<Triple>& triples,
                                                      const std::set<EntityId>& seeds,
                                                      std::size_t hops) {
  std::vector<std::set<EntityId>> layers;
  std::set<EntityId> prev = seeds;
  for (std::size_t h = 0; h < hops; ++h) {
    std::set<EntityId> next;
    for (const Triple& t : triples)
      if (prev.count(t.head)) next.insert(t.tail);
    layers.push_back(next);
    prev = next;
  }
  return layers;
}

/// Items whose entity lies in any layer, the anchor's entity excluded.
inline std::set<ItemId> candidate_oracle(const std::vector<Triple>& triples,
                                         const std::vector<EntityId>& item_entities,
                                         ItemId anchor, std::size_t hops) {
  std::map<EntityId, ItemId> item_of;
  for (std::size_t i = 0; i < item_entities.size(); ++i) item_of[item_entities[i]] = i;
  const EntityId a = item_entities[anchor];
  std::set<ItemId> out;
  for (const auto& layer : layered_oracle(triples, {a}, hops))
    for (EntityId e : layer)
      if (e != a && item_of.count(e)) out.insert(item_of[e]);
  return out;
}

/// 20 entities, 3 relations, 40 triples, planted from a hidden translational
/// model: entities are random unit vectors in R^dim, relations random
/// vectors. Each (head, relation) pair proposes the entity nearest to
/// head + relation as its tail; the 40 pairs whose nearest entity is most
/// clearly separated from the runner-up (and is not the head) are kept. The
/// first 10 entities are items.
inline KnowledgeGraph toy_kg(std::size_t dim = 8, double relation_scale = 0.8,
                             std::uint64_t seed = 2024) {
  Rng rng(seed);
  const std::size_t n = 20;
  std::vector<std::vector<double>> ent(n, std::vector<double>(dim));
  for (auto& v : ent) {
    double norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
    for (double& x : v) x /= std::sqrt(norm);
  }
  std::vector<std::vector<double>> rel(3, std::vector<double>(dim));
  for (auto& v : rel)
    for (double& x : v) x = relation_scale * rng.normal();

  struct Proposal {
    double ratio;
    Triple triple;
  };
  std::vector<Proposal> proposals;
  for (EntityId h = 0; h < n; ++h) {
    for (RelationId r = 0; r < 3; ++r) {
      std::vector<std::pair<double, EntityId>> dist;
      for (EntityId e = 0; e < n; ++e) {
        double acc = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
          const double x = ent[h][i] + rel[r][i] - ent[e][i];
          acc += x * x;
        }
        dist.push_back({std::sqrt(acc), e});
      }
      std::sort(dist.begin(), dist.end());
      if (dist[0].second == h) continue;
      proposals.push_back({dist[0].first / dist[1].first, {h, r, dist[0].second}});
    }
  }
  std::sort(proposals.begin(), proposals.end(), [](const Proposal& a, const Proposal& b) {
    return a.ratio < b.ratio || (a.ratio == b.ratio && a.triple < b.triple);
  });
  if (proposals.size() < 40) throw std::logic_error("toy_kg: too few planted triples");
  std::vector<Triple> triples;
  for (std::size_t i = 0; i < 40; ++i) triples.push_back(proposals[i].triple);
  std::vector<EntityId> items(10);
  for (EntityId i = 0; i < 10; ++i) items[i] = i;
  return KnowledgeGraph(n, 3, std::move(triples), std::move(items));
}

/// Fraction of triples whose true tail has the strictly smallest L2
/// distance ||h + r - e|| among all entities e.
inline double hits_at_1(const Matrix& entities, const Matrix& relations,
                        std::span<const Triple> triples) {
  std::size_t hits = 0;
  const std::size_t d = entities.cols();
  auto dist = [&](const Triple& t, EntityId e) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double x = entities(t.head, i) + relations(t.relation, i) - entities(e, i);
      acc += x * x;
    }
    return std::sqrt(acc);
  };
  for (const Triple& t : triples) {
    const double truth = dist(t, t.tail);
    bool best = true;
    for (EntityId e = 0; e < entities.rows() && best; ++e)
      if (e != t.tail && dist(t, e) <= truth) best = false;
    hits += best;
  }
  return static_cast<double>(hits) / static_cast<double>(triples.size());
}

// ---- statistics ---------------------------------------------------------------------

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace kgattack::testing
