// SPDX-License-Identifier: Apache-2.0
//
// kgattack: command-line driver.
//   gen-data   write the synthetic dataset described by the config
//   pretrain   TransE embeddings for the configured knowledge graph
//   attack     run the configured attacker for every seed
//   sweep      ablation over anchor ratio, hop count or budget
//   eval       HR@k / NDCG@k of a saved environment snapshot
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "kgattack/harness.hpp"

namespace {

using namespace kgattack;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config = true) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config (INI)");
  if (needs_config) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "run a single seed");
  cmd->add_option("--out", c.out, "output directory");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.seed) cfg.seeds = {*c.seed};
  if (!c.out.empty()) {
    cfg.output_dir = c.out;
  } else if (const char* env = std::getenv("KGATTACK_OUTPUT_DIR")) {
    cfg.output_dir = env;
  }
  return cfg;
}

void print_rows(const ExperimentResult& r) {
  std::cout << "config_hash " << r.config_hash << '\n' << results_csv_header() << '\n';
  for (const auto& row : r.without_attack) std::cout << results_csv_row(row) << '\n';
  for (const auto& row : r.rows) std::cout << results_csv_row(row) << '\n';
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-graph guided injection attacks on black-box recommenders"};
  app.require_subcommand(1);

  Common gen, pre, atk, swp;
  auto* gen_cmd = app.add_subcommand("gen-data", "write the synthetic dataset");
  add_common(gen_cmd, gen);

  auto* pre_cmd = app.add_subcommand("pretrain", "pretrain TransE embeddings");
  add_common(pre_cmd, pre);

  std::string attacker;
  auto* atk_cmd = app.add_subcommand("attack", "run an attacker for every configured seed");
  add_common(atk_cmd, atk);
  atk_cmd->add_option("--attacker", attacker,
                      "KGAttack, RandomAttack, TargetAttack or TargetAttackKG");

  std::string axis = "epsilon", values;
  auto* swp_cmd = app.add_subcommand("sweep", "ablation sweep over epsilon, H or Delta");
  add_common(swp_cmd, swp);
  swp_cmd->add_option("--axis", axis, "epsilon | H | Delta");
  swp_cmd->add_option("--values", values, "comma-separated values (default: the standard grid)");
  swp_cmd->add_option("--attacker", attacker, "attacker used at every sweep point");

  std::string snapshot;
  std::vector<std::size_t> ks{10, 20};
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a saved environment snapshot");
  eval_cmd->add_option("--snapshot", snapshot, "directory written by `attack`")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--k", ks, "cutoffs")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  std::string stage_name = "setup";
  try {
    if (*gen_cmd) {
      stage_name = "config";
      ExperimentConfig cfg = resolve(gen);
      if (cfg.data.kind != DataSource::Kind::Synthetic) {
        throw ValidationError("gen-data needs [data] source = synthetic");
      }
      if (gen.seed) cfg.data.synthetic.seed = *gen.seed;
      stage_name = "generate";
      const auto files = write_synthetic(generate_synthetic(cfg.data.synthetic), cfg.output_dir);
      std::cout << files.interactions.string() << '\n'
                << files.triples.string() << '\n'
                << files.item_map.string() << '\n';
    } else if (*pre_cmd) {
      stage_name = "config";
      ExperimentConfig cfg = resolve(pre);
      if (pre.seed) cfg.pretrain.seed = *pre.seed;
      stage_name = "load data";
      const Dataset data = load_dataset(cfg.data);
      stage_name = "pretrain";
      const PretrainResult r = pretrain_transe(data.graph, cfg.pretrain);
      std::filesystem::create_directories(cfg.output_dir);
      save_checkpoint(cfg.output_dir / "embeddings.ckpt", embeddings_checkpoint(r.embeddings));
      std::ofstream loss(cfg.output_dir / "pretrain_loss.csv", std::ios::binary);
      loss << "# config_hash=" << config_hash(cfg) << "\nepoch,loss\n";
      for (std::size_t i = 0; i < r.epoch_loss.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, r.epoch_loss[i]);
        loss << buf;
      }
      std::cout << "epochs " << r.epoch_loss.size() << " first_loss "
                << (r.epoch_loss.empty() ? 0.0 : r.epoch_loss.front()) << " final_loss "
                << (r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back()) << " negative_fallbacks "
                << r.negative_fallbacks << '\n';
    } else if (*atk_cmd) {
      stage_name = "config";
      ExperimentConfig cfg = resolve(atk);
      if (!attacker.empty()) cfg.attacker = attacker;
      cfg.validate();
      stage_name = "experiment";
      print_rows(run_experiment(cfg, true));
    } else if (*swp_cmd) {
      stage_name = "config";
      ExperimentConfig cfg = resolve(swp);
      if (!attacker.empty()) cfg.attacker = attacker;
      const auto ax = parse_sweep_axis(axis);
      if (!ax) throw ValidationError("unknown sweep axis '" + axis + "'");
      const auto vals = values.empty() ? default_sweep_values(*ax) : parse_values(values);
      stage_name = "sweep";
      const SweepResult s = ablation_sweep(cfg, *ax, vals);
      write_sweep(cfg.output_dir, s);
      std::cout << sweep_table(s);
    } else if (*eval_cmd) {
      stage_name = "load snapshot";
      RecommenderEnv env = RecommenderEnv::load_snapshot(snapshot);
      stage_name = "evaluation";
      std::cout << "k,HR,NDCG,users,injected\n";
      for (std::size_t k : ks) {
        const RankingMetrics m = env.evaluate(k);
        char buf[128];
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%zu,%zu\n", k, m.hit_ratio, m.ndcg,
                      m.users, env.injected());
        std::cout << buf;
      }
    }
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: stage '" << stage_name << "': " << e.what() << '\n';
    return 1;
  }
  return 0;
}
