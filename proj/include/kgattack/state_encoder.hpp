// SPDX-License-Identifier: Apache-2.0
//
// Knowledge-enhanced state representation of a fake profile:
//   1. each item is embedded by L rounds of attention-weighted neighbor
//      aggregation over the KG, starting from the pretrained entity vectors;
//   2. a GRU runs over the profile's item vectors and its final hidden
//      state is the RL state.
#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "kgattack/autodiff.hpp"
#include "kgattack/kg_store.hpp"
#include "kgattack/parameters.hpp"
#include "kgattack/transe.hpp"

namespace kgattack {

struct EncoderConfig {
  std::size_t gnn_layers = 1;
  std::size_t hidden = 32;
  /// Larger neighborhoods are uniformly subsampled once per (layer, entity).
  std::size_t max_neighbors = 64;
  /// Attention divisor: false -> sqrt(|N(i)|), true -> sqrt(embedding dim).
  bool scale_by_embedding_dim = false;
  std::uint64_t seed = 0;
};

/// One GRU cell:
///   z = sigmoid(Wz x + Uz h + bz)          (reset gate)
///   u = sigmoid(Wu x + Uu h + bu)          (update gate)
///   c = tanh(Wc x + Uc (z o h) + bc)
///   h' = u o h + (1 - u) o c
class GruCell {
 public:
  struct Step {
    Var reset;
    Var update;
    Var candidate;
    Var hidden;
  };

  GruCell(ParameterSet& params, std::size_t input_dim, std::size_t hidden_dim, Rng& rng);

  Step step(Tape& tape, const Var& input, const Var& hidden) const;
  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }

 private:
  std::size_t input_dim_;
  std::size_t hidden_dim_;
  Parameter *wz_, *uz_, *bz_, *wu_, *uu_, *bu_, *wc_, *uc_, *bc_;
};

class StateEncoder {
 public:
  /// Per-tape memo of entity embeddings, shared by every item and profile
  /// encoded on the same tape.
  class Session {
   public:
    explicit Session(Tape& tape) : tape_(tape) {}
    Tape& tape() { return tape_; }

   private:
    friend class StateEncoder;
    Tape& tape_;
    std::unordered_map<std::uint64_t, Var> memo_;
    std::unordered_map<std::uint64_t, Var> attention_;
  };

  StateEncoder(const KnowledgeGraph& graph, const KgEmbeddings& embeddings, EncoderConfig cfg,
               Rng& init_rng);
  StateEncoder(const StateEncoder&) = delete;
  StateEncoder& operator=(const StateEncoder&) = delete;

  /// Item vector after all GNN layers (dimension = embedding dim).
  Var item_embedding(Session& s, ItemId item) const;
  /// Entity vector after `layer` aggregation rounds (0 = pretrained).
  Var entity_embedding(Session& s, EntityId entity, std::size_t layer) const;
  /// Attention weights used for `entity` at `layer` (>= 1); an invalid Var
  /// when the entity has no neighbors.
  Var attention_weights(Session& s, EntityId entity, std::size_t layer) const;

  /// GRU over the item vectors, from a zero hidden state. Profile must be
  /// nonempty.
  Var encode(Session& s, std::span<const ItemId> profile) const;
  /// Same, over caller-provided item vectors.
  Var encode_vectors(Tape& tape, std::span<const Var> item_vectors) const;

  /// Neighbor list used at `layer` (after subsampling), sorted.
  std::span<const EntityId> neighbors(EntityId entity, std::size_t layer) const;

  const KnowledgeGraph& graph() const { return graph_; }
  const KgEmbeddings& embeddings() const { return embeddings_; }
  const EncoderConfig& config() const { return cfg_; }
  std::size_t embedding_dim() const { return embeddings_.dim(); }
  std::size_t state_dim() const { return cfg_.hidden; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const GruCell& gru() const { return gru_; }

 private:
  struct LayerParams {
    Parameter* self_weight;      // W1^l
    Parameter* neighbor_weight;  // W2^l
  };

  const KnowledgeGraph& graph_;
  const KgEmbeddings& embeddings_;
  EncoderConfig cfg_;
  ParameterSet params_{"encoder"};
  std::vector<LayerParams> layers_;
  Parameter* query_weight_ = nullptr;  // W_in
  Parameter* key_weight_ = nullptr;    // W_out
  GruCell gru_;
  std::vector<std::vector<EntityId>> full_neighbors_;
  // (layer - 1) -> entity -> sampled list; only for entities above the cap
  std::vector<std::unordered_map<EntityId, std::vector<EntityId>>> sampled_neighbors_;
};

}  // namespace kgattack
