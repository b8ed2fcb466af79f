// SPDX-License-Identifier: Apache-2.0
//
// Translation-based knowledge-graph embeddings (head + relation ~ tail),
// used to initialize the item representations of the state encoder.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kgattack/kg_store.hpp"
#include "kgattack/parameters.hpp"
#include "kgattack/random.hpp"
#include "kgattack/tensor.hpp"

namespace kgattack {

enum class DistanceNorm { L1, L2 };

struct KgEmbeddings {
  Matrix entities;   // entity_count x dim
  Matrix relations;  // relation_count x dim

  std::size_t dim() const { return entities.cols(); }
  std::span<const double> entity(EntityId e) const { return entities.row(e); }
  std::span<const double> relation(RelationId r) const { return relations.row(r); }
};

/// d(head + relation, tail) under the chosen norm.
double transe_score(const KgEmbeddings& emb, const Triple& t, DistanceNorm norm);

/// Sum over paired (positive, negative) triples of
/// max(0, d_pos + margin - d_neg).
double transe_loss(const KgEmbeddings& emb, std::span<const Triple> positives,
                   std::span<const Triple> negatives, double margin, DistanceNorm norm);

/// Adds d(transe_loss)/d(embedding) into the two gradient tables (same
/// shapes as emb.entities / emb.relations). Returns the loss.
double transe_loss_gradient(const KgEmbeddings& emb, std::span<const Triple> positives,
                            std::span<const Triple> negatives, double margin, DistanceNorm norm,
                            Matrix& entity_grad, Matrix& relation_grad);

struct NegativeSampler {
  /// Number of draws that fell back to a corrupted triple present in the graph.
  std::size_t exhausted_retries = 0;
  std::size_t max_tries = 100;

  /// Replaces head or tail (fair coin) with a uniform entity, retrying while
  /// the corrupted triple is a known fact.
  Triple sample(const KnowledgeGraph& g, const Triple& t, Rng& rng);
};

struct PretrainConfig {
  std::size_t dim = 16;
  std::size_t epochs = 100;
  double lr = 0.01;
  double margin = 1.0;
  DistanceNorm norm = DistanceNorm::L2;
  std::size_t batch = 128;
  std::uint64_t seed = 1;
};

struct PretrainResult {
  KgEmbeddings embeddings;
  std::vector<double> epoch_loss;
  std::size_t negative_fallbacks = 0;
};

/// Minibatch Adam on the margin loss. Entity rows are projected back onto
/// the unit sphere after every update; relation rows are unconstrained.
PretrainResult pretrain_transe(const KnowledgeGraph& g, const PretrainConfig& cfg);

Checkpoint embeddings_checkpoint(const KgEmbeddings& emb);
KgEmbeddings embeddings_from_checkpoint(const Checkpoint& ckpt);

}  // namespace kgattack
