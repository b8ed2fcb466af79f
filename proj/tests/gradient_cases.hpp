// SPDX-License-Identifier: Apache-2.0
//
// One finite-difference case per trainable layer type. Each case builds the
// layer with fresh random parameters and inputs drawn from `rng` and returns
// the gradient check of a generic scalar readout of the layer's output.
#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "kgattack/policy.hpp"
#include "kgattack/state_encoder.hpp"
#include "support.hpp"

namespace kgattack::testing {

struct GradientCase {
  std::string name;
  std::function<GradCheck(Rng&)> run;
};

inline GradCheck check_affine(Rng& rng) {
  ParameterSet set("affine");
  Parameter& w = set.add("W", random_matrix(4, 3, rng));
  Parameter& b = set.add("b", random_matrix(4, 1, rng));
  const Matrix x = random_matrix(3, 1, rng);
  const Matrix c = random_matrix(4, 1, rng);
  return gradient_check({&set}, [&](Tape& t) {
    return dot(tanh(affine(t.parameter(w), t.constant(x), t.parameter(b))), t.constant(c));
  });
}

inline GradCheck check_gru(Rng& rng) {
  ParameterSet set("gru");
  GruCell cell(set, 3, 4, rng);
  randomize(set, rng);
  const Matrix x = random_matrix(3, 1, rng);
  const Matrix h = random_matrix(4, 1, rng);
  const Matrix c = random_matrix(4, 1, rng);
  return gradient_check({&set}, [&](Tape& t) {
    return dot(cell.step(t, t.constant(x), t.constant(h)).hidden, t.constant(c));
  });
}

/// Small graph: 3 items, 4 attributes, every item has 2-3 out-neighbors and
/// the attributes point back at items, so two aggregation rounds reach
/// second-order neighbors.
struct TinyKg {
  KnowledgeGraph graph;
  KgEmbeddings emb;

  TinyKg(Rng& rng, std::size_t dim) {
    std::vector<Triple> t{{0, 0, 3}, {0, 1, 4}, {1, 0, 4}, {1, 1, 5}, {1, 0, 6},
                          {2, 0, 5}, {2, 1, 6}, {3, 2, 1}, {4, 2, 2}, {5, 2, 0}, {6, 2, 1}};
    graph = KnowledgeGraph(7, 3, t, {0, 1, 2});
    emb.entities = random_matrix(7, dim, rng);
    emb.relations = random_matrix(3, dim, rng);
  }
};

inline GradCheck check_gnn_attention(Rng& rng) {
  TinyKg kg(rng, 4);
  EncoderConfig cfg;
  cfg.gnn_layers = 2;
  cfg.hidden = 3;
  StateEncoder enc(kg.graph, kg.emb, cfg, rng);
  randomize(enc.params(), rng);
  const Matrix c = random_matrix(4, 1, rng);
  return gradient_check({&enc.params()}, [&](Tape& t) {
    StateEncoder::Session s(t);
    return dot(enc.item_embedding(s, 1), t.constant(c));
  });
}

inline GradCheck check_anchor_head(Rng& rng) {
  AnchorPolicy policy(5, 6, 8, rng);
  randomize(policy.params(), rng);
  const Matrix x = random_matrix(5, 1, rng);
  const std::size_t len = 1 + rng.index(8);
  const Matrix c = random_matrix(len, 1, rng);
  std::vector<std::size_t> valid(len);
  for (std::size_t i = 0; i < len; ++i) valid[i] = i;
  return gradient_check({&policy.params()}, [&](Tape& t) {
    return dot(gather(policy.log_probs(t, t.constant(x), len), valid), t.constant(c));
  });
}

inline GradCheck check_item_head(Rng& rng) {
  ItemPolicy policy(5, 6, 4, rng);
  randomize(policy.params(), rng);
  const Matrix x = random_matrix(5, 1, rng);
  std::vector<Matrix> items;
  for (int i = 0; i < 6; ++i) items.push_back(random_matrix(4, 1, rng));
  const Matrix c = random_matrix(items.size(), 1, rng);
  return gradient_check({&policy.params()}, [&](Tape& t) {
    std::vector<Var> vecs;
    for (const Matrix& m : items) vecs.push_back(t.constant(m));
    return dot(policy.log_probs(t, t.constant(x), vecs), t.constant(c));
  });
}

inline GradCheck check_critic(Rng& rng) {
  Critic critic(5, 6, rng);
  randomize(critic.params(), rng);
  const Matrix x = random_matrix(5, 1, rng);
  return gradient_check({&critic.params()},
                        [&](Tape& t) { return critic.value(t, t.constant(x)); });
}

/// Whole encoder: GNN item vectors feeding a GRU over a 3-item profile.
inline GradCheck check_encoder(Rng& rng) {
  TinyKg kg(rng, 4);
  EncoderConfig cfg;
  cfg.gnn_layers = 1;
  cfg.hidden = 3;
  StateEncoder enc(kg.graph, kg.emb, cfg, rng);
  randomize(enc.params(), rng);
  const Matrix c = random_matrix(3, 1, rng);
  const std::array<ItemId, 3> profile{2, 0, 1};
  return gradient_check({&enc.params()}, [&](Tape& t) {
    StateEncoder::Session s(t);
    return dot(enc.encode(s, profile), t.constant(c));
  });
}

inline std::vector<GradientCase> gradient_cases() {
  return {{"affine", check_affine},           {"gru_cell", check_gru},
          {"gnn_attention", check_gnn_attention}, {"anchor_head", check_anchor_head},
          {"item_head", check_item_head},     {"critic", check_critic},
          {"state_encoder", check_encoder}};
}

}  // namespace kgattack::testing
