// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration, synthetic data, and end-to-end runs of the
// KG-guided attacker and the baselines against a target environment.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgattack/attack_trainer.hpp"
#include "kgattack/baselines.hpp"
#include "kgattack/kg_store.hpp"
#include "kgattack/state_encoder.hpp"
#include "kgattack/target_env.hpp"
#include "kgattack/transe.hpp"

namespace kgattack {

// ---- synthetic data ------------------------------------------------------------

struct SyntheticSpec {
  std::size_t user_count = 500;
  std::size_t item_count = 200;
  std::size_t non_item_entity_count = 400;
  /// Even: the upper half holds the inverse of each lower-half relation.
  std::size_t relation_count = 4;
  std::size_t interactions_per_user = 10;
  std::size_t kg_triples_per_item = 4;
  std::size_t cluster_count = 5;
  double in_cluster_fraction = 0.8;
  /// Zipf exponent of item popularity inside a cluster.
  double popularity_exponent = 1.0;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SyntheticData {
  std::size_t entity_count = 0;
  std::size_t relation_count = 0;
  std::vector<Triple> triples;
  std::vector<EntityId> item_entities;
  std::vector<std::vector<ItemId>> user_items;
  std::vector<std::size_t> item_cluster;
  std::vector<std::size_t> user_cluster;

  KnowledgeGraph graph() const;
  InteractionMatrix interactions() const;
};

/// Clustered items and attributes. Every item links to its cluster's hub
/// attribute and to further attributes (mostly from its own cluster), in
/// both directions; users draw most interactions from one preferred cluster
/// and the rest uniformly from items outside it.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

struct DataFiles {
  std::filesystem::path interactions;
  std::filesystem::path triples;
  std::filesystem::path item_map;
};

/// Writes interactions.tsv, kg_triples.tsv and item_map.tsv into `dir`.
DataFiles write_synthetic(const SyntheticData& data, const std::filesystem::path& dir);

// ---- configuration ---------------------------------------------------------------

struct DataSource {
  enum class Kind { Synthetic, Files };
  Kind kind = Kind::Synthetic;
  SyntheticSpec synthetic;
  DataFiles files;
  /// Fixed target item; drawn per seed among rarely-interacted items otherwise.
  std::optional<ItemId> target;
};

struct ExperimentConfig {
  DataSource data;
  EnvConfig env;
  PretrainConfig pretrain;
  EncoderConfig encoder;
  TrainConfig train;
  std::string attacker = "KGAttack";
  std::vector<std::size_t> ks{10, 20};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  /// Cutoff reported in sweep tables.
  std::size_t sweep_k = 20;
  /// Rarely-interacted threshold for drawing target items.
  std::size_t target_max_interactions = 10;
  std::filesystem::path output_dir = "results";

  /// Throws ValidationError describing the first inconsistency.
  void validate() const;
};

/// INI-style text: `[section]` headers and `key = value` lines. Unknown
/// sections or keys are rejected; `[data] source` is required.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every field, fixed order, defaults resolved (output directory omitted).
std::string canonical_config(const ExperimentConfig& cfg);
/// 64-bit FNV-1a of the canonical text, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

// ---- experiment -------------------------------------------------------------------

struct ResultRow {
  std::string attacker;
  std::string seed;  // numeric seed or "median"
  std::size_t k = 0;
  double hit_ratio = 0.0;
  double ndcg = 0.0;
  std::size_t budget_used = 0;
  double wallclock_seconds = 0.0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  ItemId target = 0;
  std::vector<RankingMetrics> before;  // one per k
  std::vector<RankingMetrics> after;
  std::size_t budget_used = 0;
  double wallclock_seconds = 0.0;
  AttackTrace trace;  // KGAttack only
};

struct ExperimentResult {
  std::string config_hash;
  /// Attacker rows: seeds x ks, then one median row per k.
  std::vector<ResultRow> rows;
  /// Pre-attack metrics in the same layout, attacker "WithoutAttack".
  std::vector<ResultRow> without_attack;
  std::vector<SeedRun> runs;
};

/// Loaded or generated interaction data and knowledge graph.
struct Dataset {
  KnowledgeGraph graph;
  InteractionMatrix interactions;
  std::string label;
};
Dataset load_dataset(const DataSource& source);

/// Uniform draw among items with fewer than `max_interactions` users that
/// leave enough non-interacting users for the spy set.
ItemId choose_target(const InteractionMatrix& y, std::size_t max_interactions,
                     std::size_t spy_users, std::uint64_t seed);

/// Runs the configured attacker for every seed and evaluates HR@k / NDCG@k
/// on the normal users. With `write_outputs`, results.csv, per-seed metrics
/// CSVs (KGAttack), the resolved config and environment snapshots go to
/// cfg.output_dir. Stage failures are rethrown as StageError.
ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_outputs = false);
/// Same with a preloaded dataset.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& data,
                                bool write_outputs = false);

class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "': " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

std::string results_csv_header();
std::string results_csv_row(const ResultRow& r);
void write_results_csv(const std::filesystem::path& path, const ExperimentResult& result);

// ---- sweeps -----------------------------------------------------------------------

enum class SweepAxis { AnchorRatio, Hops, Budget };
std::optional<SweepAxis> parse_sweep_axis(const std::string& name);
std::string sweep_axis_symbol(SweepAxis axis);
std::vector<double> default_sweep_values(SweepAxis axis);

struct SweepResult {
  SweepAxis axis = SweepAxis::AnchorRatio;
  std::string config_hash;
  std::string dataset_label;
  std::vector<double> values;
  /// Median row at cfg.sweep_k, one per value.
  std::vector<ResultRow> aggregates;
  /// Median pre-attack row at cfg.sweep_k (shared by every value).
  ResultRow without_attack;
  std::vector<ExperimentResult> experiments;
};

SweepResult ablation_sweep(const ExperimentConfig& cfg, SweepAxis axis,
                           std::span<const double> values);
SweepResult ablation_sweep(const ExperimentConfig& cfg, const Dataset& data, SweepAxis axis,
                           std::span<const double> values);

/// Long CSV (one results row per value, seed and k, prefixed by the axis
/// value) and the wide table: header `symbol,v1,v2,...`, one row
/// `dataset,HR@k(v1),...`.
void write_sweep(const std::filesystem::path& dir, const SweepResult& sweep);
std::string sweep_table(const SweepResult& sweep);

}  // namespace kgattack
