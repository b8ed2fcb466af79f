// SPDX-License-Identifier: Apache-2.0
#include "kgattack/transe.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace kgattack {
namespace {

void check_ids(const KgEmbeddings& emb, const Triple& t) {
  if (t.head >= emb.entities.rows() || t.tail >= emb.entities.rows() ||
      t.relation >= emb.relations.rows()) {
    throw ValidationError("triple id outside embedding tables");
  }
}

// residual = head + relation - tail
std::vector<double> residual(const KgEmbeddings& emb, const Triple& t) {
  check_ids(emb, t);
  const auto p = emb.entity(t.head);
  const auto r = emb.relation(t.relation);
  const auto q = emb.entity(t.tail);
  std::vector<double> out(emb.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i] + r[i] - q[i];
  return out;
}

double norm_of(const std::vector<double>& v, DistanceNorm norm) {
  double acc = 0.0;
  if (norm == DistanceNorm::L1) {
    for (double x : v) acc += std::abs(x);
    return acc;
  }
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

// d norm / d residual
std::vector<double> norm_gradient(const std::vector<double>& v, double value, DistanceNorm norm) {
  std::vector<double> g(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (norm == DistanceNorm::L1) {
      g[i] = v[i] > 0.0 ? 1.0 : (v[i] < 0.0 ? -1.0 : 0.0);
    } else if (value > 0.0) {
      g[i] = v[i] / value;
    }
  }
  return g;
}

void accumulate(const Triple& t, const std::vector<double>& g, double sign, Matrix& eg,
                Matrix& rg) {
  auto head = eg.row(t.head);
  auto rel = rg.row(t.relation);
  auto tail = eg.row(t.tail);
  for (std::size_t i = 0; i < g.size(); ++i) {
    head[i] += sign * g[i];
    rel[i] += sign * g[i];
    tail[i] -= sign * g[i];
  }
}

void check_batch(std::span<const Triple> pos, std::span<const Triple> neg, double margin) {
  if (margin < 0.0) throw std::invalid_argument("transe: margin must be >= 0");
  if (pos.size() != neg.size()) {
    throw std::invalid_argument("transe: positive and negative batches differ in length");
  }
}

}  // namespace

double transe_score(const KgEmbeddings& emb, const Triple& t, DistanceNorm norm) {
  return norm_of(residual(emb, t), norm);
}

double transe_loss(const KgEmbeddings& emb, std::span<const Triple> positives,
                   std::span<const Triple> negatives, double margin, DistanceNorm norm) {
  check_batch(positives, negatives, margin);
  double loss = 0.0;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const double hinge = transe_score(emb, positives[i], norm) + margin -
                         transe_score(emb, negatives[i], norm);
    loss += std::max(0.0, hinge);
  }
  return loss;
}

double transe_loss_gradient(const KgEmbeddings& emb, std::span<const Triple> positives,
                            std::span<const Triple> negatives, double margin, DistanceNorm norm,
                            Matrix& entity_grad, Matrix& relation_grad) {
  check_batch(positives, negatives, margin);
  double loss = 0.0;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const auto rp = residual(emb, positives[i]);
    const auto rn = residual(emb, negatives[i]);
    const double dp = norm_of(rp, norm);
    const double dn = norm_of(rn, norm);
    const double hinge = dp + margin - dn;
    if (hinge <= 0.0) continue;
    loss += hinge;
    accumulate(positives[i], norm_gradient(rp, dp, norm), 1.0, entity_grad, relation_grad);
    accumulate(negatives[i], norm_gradient(rn, dn, norm), -1.0, entity_grad, relation_grad);
  }
  return loss;
}

Triple NegativeSampler::sample(const KnowledgeGraph& g, const Triple& t, Rng& rng) {
  Triple candidate = t;
  for (std::size_t attempt = 0; attempt < max_tries; ++attempt) {
    candidate = t;
    const bool corrupt_head = rng.coin(0.5);
    // Draw from the other entities so the corruption always changes the triple.
    const EntityId original = corrupt_head ? t.head : t.tail;
    EntityId e = static_cast<EntityId>(rng.index(g.entity_count() - 1));
    if (e >= original) ++e;
    (corrupt_head ? candidate.head : candidate.tail) = e;
    if (!g.contains(candidate)) return candidate;
  }
  ++exhausted_retries;
  return candidate;
}

PretrainResult pretrain_transe(const KnowledgeGraph& g, const PretrainConfig& cfg) {
  if (g.triples().empty()) throw ValidationError("pretrain: graph has no triples");
  if (g.entity_count() < 2) throw ValidationError("pretrain: need at least two entities");
  if (cfg.dim == 0 || cfg.batch == 0) throw std::invalid_argument("pretrain: dim and batch must be positive");
  if (cfg.margin < 0.0) throw std::invalid_argument("pretrain: margin must be >= 0");

  Rng rng(cfg.seed);
  ParameterSet params("transe");
  Parameter& entities = params.add_glorot("entities", g.entity_count(), cfg.dim, rng);
  Parameter& relations = params.add_glorot("relations", g.relation_count(), cfg.dim, rng);
  auto normalize_entities = [&entities]() {
    for (std::size_t e = 0; e < entities.value.rows(); ++e) {
      auto row = entities.value.row(e);
      double n = 0.0;
      for (double v : row) n += v * v;
      n = std::sqrt(n);
      if (n > 0.0)
        for (double& v : row) v /= n;
    }
  };
  normalize_entities();

  const auto facts = g.triples();
  std::vector<std::size_t> order(facts.size());
  std::iota(order.begin(), order.end(), 0);
  NegativeSampler sampler;
  AdamConfig adam{.lr = cfg.lr};
  PretrainResult result;
  result.epoch_loss.reserve(cfg.epochs);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch);
      std::vector<Triple> pos, neg;
      for (std::size_t k = start; k < stop; ++k) {
        pos.push_back(facts[order[k]]);
        neg.push_back(sampler.sample(g, pos.back(), rng));
      }
      KgEmbeddings view{entities.value, relations.value};
      entities.grad.fill(0.0);
      relations.grad.fill(0.0);
      epoch_loss +=
          transe_loss_gradient(view, pos, neg, cfg.margin, cfg.norm, entities.grad, relations.grad);
      entities.grad_populated = relations.grad_populated = true;
      params.adam_step(adam);
      normalize_entities();
    }
    result.epoch_loss.push_back(epoch_loss);
  }
  result.embeddings = KgEmbeddings{entities.value, relations.value};
  result.negative_fallbacks = sampler.exhausted_retries;
  return result;
}

Checkpoint embeddings_checkpoint(const KgEmbeddings& emb) {
  Checkpoint c;
  c.meta_json = R"({"kind":"transe"})";
  c.tensors.push_back({"transe.entities", emb.entities});
  c.tensors.push_back({"transe.relations", emb.relations});
  return c;
}

KgEmbeddings embeddings_from_checkpoint(const Checkpoint& ckpt) {
  return KgEmbeddings{ckpt.find("transe.entities"), ckpt.find("transe.relations")};
}

}  // namespace kgattack
