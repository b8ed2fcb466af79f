// SPDX-License-Identifier: Apache-2.0
#include "kgattack/state_encoder.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace kgattack {

GruCell::GruCell(ParameterSet& params, std::size_t input_dim, std::size_t hidden_dim, Rng& rng)
    : input_dim_(input_dim), hidden_dim_(hidden_dim) {
  wz_ = &params.add_glorot("gru.W_z", hidden_dim, input_dim, rng);
  uz_ = &params.add_glorot("gru.U_z", hidden_dim, hidden_dim, rng);
  bz_ = &params.add_zeros("gru.b_z", hidden_dim, 1);
  wu_ = &params.add_glorot("gru.W_u", hidden_dim, input_dim, rng);
  uu_ = &params.add_glorot("gru.U_u", hidden_dim, hidden_dim, rng);
  bu_ = &params.add_zeros("gru.b_u", hidden_dim, 1);
  wc_ = &params.add_glorot("gru.W_c", hidden_dim, input_dim, rng);
  uc_ = &params.add_glorot("gru.U_c", hidden_dim, hidden_dim, rng);
  bc_ = &params.add_zeros("gru.b_c", hidden_dim, 1);
}

GruCell::Step GruCell::step(Tape& tape, const Var& input, const Var& hidden) const {
  if (input.rows() != input_dim_ || input.cols() != 1) {
    throw NumericError("gru: input " + input.value().shape_string() + " does not match W_z with " +
                       std::to_string(input_dim_) + " columns");
  }
  if (hidden.rows() != hidden_dim_ || hidden.cols() != 1) {
    throw NumericError("gru: hidden state " + hidden.value().shape_string() +
                       " does not match hidden dim " + std::to_string(hidden_dim_));
  }
  auto p = [&tape](Parameter* q) { return tape.parameter(*q); };
  Step s;
  s.reset = sigmoid(add(affine(p(wz_), input, p(bz_)), matmul(p(uz_), hidden)));
  s.update = sigmoid(add(affine(p(wu_), input, p(bu_)), matmul(p(uu_), hidden)));
  s.candidate = tanh(add(affine(p(wc_), input, p(bc_)), matmul(p(uc_), hadamard(s.reset, hidden))));
  s.hidden = add(hadamard(s.update, hidden), hadamard(scale(s.update, -1.0, 1.0), s.candidate));
  return s;
}

StateEncoder::StateEncoder(const KnowledgeGraph& graph, const KgEmbeddings& embeddings,
                           EncoderConfig cfg, Rng& init_rng)
    : graph_(graph),
      embeddings_(embeddings),
      cfg_(cfg),
      gru_(params_, embeddings.dim(), cfg.hidden, init_rng) {
  if (embeddings_.entities.rows() != graph_.entity_count()) {
    throw ValidationError("encoder: embedding table has " +
                          std::to_string(embeddings_.entities.rows()) + " rows for " +
                          std::to_string(graph_.entity_count()) + " entities");
  }
  if (cfg_.max_neighbors == 0) throw std::invalid_argument("encoder: max_neighbors must be >= 1");
  const std::size_t d = embeddings_.dim();
  for (std::size_t l = 1; l <= cfg_.gnn_layers; ++l) {
    LayerParams lp;
    lp.self_weight = &params_.add_glorot("gnn.W1." + std::to_string(l), d, d, init_rng);
    lp.neighbor_weight = &params_.add_glorot("gnn.W2." + std::to_string(l), d, d, init_rng);
    layers_.push_back(lp);
  }
  query_weight_ = &params_.add_glorot("gnn.W_in", d, d, init_rng);
  key_weight_ = &params_.add_glorot("gnn.W_out", d, d, init_rng);

  full_neighbors_.resize(graph_.entity_count());
  for (EntityId e = 0; e < graph_.entity_count(); ++e) {
    auto& list = full_neighbors_[e];
    for (const Edge& edge : graph_.out_edges(e)) list.push_back(edge.tail);
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  sampled_neighbors_.resize(cfg_.gnn_layers);
  for (std::size_t l = 0; l < cfg_.gnn_layers; ++l) {
    for (EntityId e = 0; e < graph_.entity_count(); ++e) {
      const auto& all = full_neighbors_[e];
      if (all.size() <= cfg_.max_neighbors) continue;
      Rng rng = Rng::derive({cfg_.seed, l + 1, e});
      std::vector<EntityId> picked;
      for (std::size_t idx : rng.sample_without_replacement(all.size(), cfg_.max_neighbors)) {
        picked.push_back(all[idx]);
      }
      std::sort(picked.begin(), picked.end());
      sampled_neighbors_[l].emplace(e, std::move(picked));
    }
  }
}

std::span<const EntityId> StateEncoder::neighbors(EntityId entity, std::size_t layer) const {
  if (layer == 0 || layer > cfg_.gnn_layers) throw std::out_of_range("encoder: layer out of range");
  if (entity >= full_neighbors_.size()) throw ValidationError("encoder: unknown entity");
  const auto& sampled = sampled_neighbors_[layer - 1];
  if (auto it = sampled.find(entity); it != sampled.end()) return it->second;
  return full_neighbors_[entity];
}

Var StateEncoder::entity_embedding(Session& s, EntityId entity, std::size_t layer) const {
  if (entity >= graph_.entity_count()) throw ValidationError("encoder: unknown entity");
  const std::uint64_t key = (static_cast<std::uint64_t>(layer) << 32) | entity;
  if (auto it = s.memo_.find(key); it != s.memo_.end()) return it->second;

  Tape& tape = s.tape();
  Var out;
  if (layer == 0) {
    const auto row = embeddings_.entity(entity);
    out = tape.constant(Matrix::column(std::vector<double>(row.begin(), row.end())));
  } else {
    const LayerParams& lp = layers_[layer - 1];
    const Var self = entity_embedding(s, entity, layer - 1);
    out = matmul(tape.parameter(*lp.self_weight), self);
    const auto nbrs = neighbors(entity, layer);
    if (!nbrs.empty()) {
      std::vector<Var> cols;
      cols.reserve(nbrs.size());
      for (EntityId j : nbrs) cols.push_back(entity_embedding(s, j, layer - 1));
      const Var stacked = hstack(cols);                                   // d x n
      const Var query = matmul(tape.parameter(*query_weight_), self);     // d x 1
      const Var keys = matmul(tape.parameter(*key_weight_), stacked);     // d x n
      const double divisor = cfg_.scale_by_embedding_dim
                                 ? static_cast<double>(embedding_dim())
                                 : static_cast<double>(nbrs.size());
      const Var scores = scale(matmul(transpose(keys), query), 1.0 / std::sqrt(divisor));
      const Var alpha = softmax(scores);
      s.attention_.emplace(key, alpha);
      const Var aggregated = matmul(stacked, alpha);
      out = add(out, matmul(tape.parameter(*lp.neighbor_weight), aggregated));
    }
  }
  s.memo_.emplace(key, out);
  return out;
}

Var StateEncoder::attention_weights(Session& s, EntityId entity, std::size_t layer) const {
  if (layer == 0 || layer > cfg_.gnn_layers) throw std::out_of_range("encoder: layer out of range");
  entity_embedding(s, entity, layer);
  const std::uint64_t key = (static_cast<std::uint64_t>(layer) << 32) | entity;
  if (auto it = s.attention_.find(key); it != s.attention_.end()) return it->second;
  return Var();
}

Var StateEncoder::item_embedding(Session& s, ItemId item) const {
  return entity_embedding(s, graph_.entity_of(item), cfg_.gnn_layers);
}

Var StateEncoder::encode_vectors(Tape& tape, std::span<const Var> item_vectors) const {
  if (item_vectors.empty()) throw std::invalid_argument("encode: empty profile");
  Var h = tape.constant(Matrix(cfg_.hidden, 1));
  for (const Var& x : item_vectors) h = gru_.step(tape, x, h).hidden;
  return h;
}

Var StateEncoder::encode(Session& s, std::span<const ItemId> profile) const {
  std::vector<Var> vectors;
  vectors.reserve(profile.size());
  for (ItemId item : profile) vectors.push_back(item_embedding(s, item));
  return encode_vectors(s.tape(), vectors);
}

}  // namespace kgattack
