// SPDX-License-Identifier: Apache-2.0
#include "kgattack/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace kgattack {

// ---- synthetic data ------------------------------------------------------------

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("synthetic spec: " + what); };
  if (user_count == 0 || item_count == 0 || non_item_entity_count == 0 || relation_count == 0 ||
      interactions_per_user == 0 || kg_triples_per_item == 0 || cluster_count == 0) {
    fail("all counts must be positive");
  }
  if (cluster_count > item_count) fail("cluster_count exceeds item_count");
  if (cluster_count > non_item_entity_count) fail("cluster_count exceeds non_item_entity_count");
  if (relation_count % 2 != 0) fail("relation_count must be even");
  if (interactions_per_user > item_count) fail("interactions_per_user exceeds item_count");
  if (kg_triples_per_item > non_item_entity_count) {
    fail("kg_triples_per_item exceeds non_item_entity_count");
  }
  if (!(in_cluster_fraction >= 0.0 && in_cluster_fraction <= 1.0)) {
    fail("in_cluster_fraction must lie in [0, 1]");
  }
  if (!(popularity_exponent >= 0.0)) fail("popularity_exponent must be >= 0");
}

KnowledgeGraph SyntheticData::graph() const {
  return KnowledgeGraph(entity_count, relation_count, triples, item_entities);
}

InteractionMatrix SyntheticData::interactions() const {
  InteractionMatrix y(item_entities.size());
  for (const auto& row : user_items) y.add_user(row);
  y.seal();
  return y;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t n = spec.item_count;
  const std::size_t e = spec.non_item_entity_count;
  const std::size_t c = spec.cluster_count;
  const std::size_t half = spec.relation_count / 2;

  SyntheticData out;
  out.entity_count = n + e;
  out.relation_count = spec.relation_count;
  out.item_entities.resize(n);
  for (ItemId i = 0; i < n; ++i) out.item_entities[i] = i;

  std::vector<std::vector<ItemId>> cluster_items(c);
  out.item_cluster.resize(n);
  for (ItemId i = 0; i < n; ++i) {
    out.item_cluster[i] = i * c / n;
    cluster_items[out.item_cluster[i]].push_back(i);
  }
  std::vector<std::vector<EntityId>> cluster_attrs(c);
  for (std::size_t a = 0; a < e; ++a) {
    cluster_attrs[a * c / e].push_back(static_cast<EntityId>(n + a));
  }

  // Item -> attribute links; the first attribute of each cluster is its hub.
  std::vector<std::size_t> attr_degree(e, 0);
  auto link = [&](ItemId item, RelationId r, EntityId attr) {
    out.triples.push_back({item, r, attr});
    out.triples.push_back({attr, static_cast<RelationId>(r + half), item});
    ++attr_degree[attr - n];
  };
  auto other_relation = [&]() -> RelationId {
    return half > 1 ? static_cast<RelationId>(1 + rng.index(half - 1)) : 0;
  };
  for (ItemId i = 0; i < n; ++i) {
    const auto& own = cluster_attrs[out.item_cluster[i]];
    std::set<EntityId> chosen{own.front()};
    link(i, 0, own.front());
    while (chosen.size() < spec.kg_triples_per_item) {
      const bool in_cluster = chosen.size() < own.size() && rng.coin(spec.in_cluster_fraction);
      const EntityId a = in_cluster ? own[rng.index(own.size())]
                                    : static_cast<EntityId>(n + rng.index(e));
      if (chosen.insert(a).second) link(i, other_relation(), a);
    }
  }
  // Attributes nobody picked get one item of their cluster.
  for (std::size_t cl = 0; cl < c; ++cl) {
    for (EntityId a : cluster_attrs[cl]) {
      if (attr_degree[a - n] == 0) {
        link(cluster_items[cl][rng.index(cluster_items[cl].size())], other_relation(), a);
      }
    }
  }

  // Zipf popularity within each cluster over a shuffled rank order.
  std::vector<double> weight(n, 0.0);
  for (auto& items : cluster_items) {
    const auto order = rng.sample_without_replacement(items.size(), items.size());
    for (std::size_t r = 0; r < order.size(); ++r) {
      weight[items[order[r]]] = 1.0 / std::pow(static_cast<double>(r + 1), spec.popularity_exponent);
    }
  }

  out.user_items.resize(spec.user_count);
  out.user_cluster.resize(spec.user_count);
  for (std::size_t u = 0; u < spec.user_count; ++u) {
    const std::size_t pref = rng.index(c);
    out.user_cluster[u] = pref;
    const auto& own = cluster_items[pref];
    std::vector<double> own_w(own.size());
    for (std::size_t j = 0; j < own.size(); ++j) own_w[j] = weight[own[j]];
    std::vector<ItemId> outside;
    for (ItemId i = 0; i < n; ++i)
      if (out.item_cluster[i] != pref) outside.push_back(i);

    std::set<ItemId> taken;
    std::size_t own_left = own.size();
    while (taken.size() < spec.interactions_per_user) {
      const std::size_t outside_left = outside.size() - (taken.size() - (own.size() - own_left));
      bool in_cluster = rng.coin(spec.in_cluster_fraction);
      if (own_left == 0) in_cluster = false;
      if (outside_left == 0) in_cluster = true;
      if (in_cluster) {
        const std::size_t j = rng.categorical(own_w);
        own_w[j] = 0.0;
        --own_left;
        taken.insert(own[j]);
      } else {
        ItemId v;
        do {
          v = outside[rng.index(outside.size())];
        } while (taken.count(v) != 0);
        taken.insert(v);
      }
    }
    out.user_items[u].assign(taken.begin(), taken.end());
  }
  return out;
}

DataFiles write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DataFiles f{dir / "interactions.tsv", dir / "kg_triples.tsv", dir / "item_map.tsv"};
  {
    std::ofstream out(f.triples, std::ios::binary);
    for (const Triple& t : data.triples) out << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
  }
  {
    std::ofstream out(f.item_map, std::ios::binary);
    for (std::size_t i = 0; i < data.item_entities.size(); ++i) {
      out << i << '\t' << data.item_entities[i] << '\n';
    }
  }
  {
    std::ofstream out(f.interactions, std::ios::binary);
    for (std::size_t u = 0; u < data.user_items.size(); ++u)
      for (ItemId v : data.user_items[u]) out << u << '\t' << v << '\n';
  }
  return f;
}

// ---- configuration ---------------------------------------------------------------

namespace {

using Schema = std::map<std::string, std::set<std::string>>;

const Schema& schema() {
  static const Schema s{
      {"data", {"source", "interactions", "triples", "item_map", "target"}},
      {"synthetic",
       {"user_count", "item_count", "non_item_entity_count", "relation_count",
        "interactions_per_user", "kg_triples_per_item", "cluster_count", "in_cluster_fraction",
        "popularity_exponent", "seed"}},
      {"env",
       {"mode", "spy_users", "normal_users", "candidate_list_size", "cooc_lambda", "mf_dim",
        "mf_epochs", "mf_lr", "mf_reg", "mf_negatives", "mf_init_scale", "mf_seed",
        "target_max_interactions"}},
      {"pretrain", {"dim", "epochs", "lr", "margin", "norm", "batch", "seed"}},
      {"encoder", {"gnn_layers", "hidden", "max_neighbors", "scale_by_embedding_dim"}},
      {"attack",
       {"attacker", "budget", "profiles_per_episode", "steps", "gamma", "clip", "anchor_ratio",
        "hops", "pool_size", "reward_k", "actor_lr", "critic_lr", "ppo_epochs",
        "standardize_advantages", "entropy_coef", "policy_hidden", "undirected_kg"}},
      {"eval", {"k", "seeds", "sweep_k", "output_dir"}},
  };
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

class Reader {
 public:
  explicit Reader(const boost::property_tree::ptree& tree) : tree_(tree) {}

  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    const auto sec = tree_.get_child_optional(section);
    if (!sec) return std::nullopt;
    const auto v = sec->get_optional<std::string>(key);
    if (!v) return std::nullopt;
    return trim(*v);
  }

  template <class T>
  void integer(const std::string& section, const std::string& key, T& out) const {
    if (auto v = raw(section, key)) out = static_cast<T>(parse_uint(section, key, *v));
  }

  void real(const std::string& section, const std::string& key, double& out) const {
    if (auto v = raw(section, key)) out = parse_double(section, key, *v);
  }

  void boolean(const std::string& section, const std::string& key, bool& out) const {
    if (auto v = raw(section, key)) {
      if (*v == "true" || *v == "1" || *v == "on" || *v == "yes") {
        out = true;
      } else if (*v == "false" || *v == "0" || *v == "off" || *v == "no") {
        out = false;
      } else {
        bad(section, key, *v, "a boolean");
      }
    }
  }

  template <class T>
  void list(const std::string& section, const std::string& key, std::vector<T>& out) const {
    auto v = raw(section, key);
    if (!v) return;
    out.clear();
    std::stringstream ss(*v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      out.push_back(static_cast<T>(parse_uint(section, key, trim(tok))));
    }
    if (out.empty()) bad(section, key, *v, "a nonempty list");
  }

  static std::uint64_t parse_uint(const std::string& section, const std::string& key,
                                  const std::string& v) {
    std::uint64_t x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) {
      bad(section, key, v, "a non-negative integer");
    }
    return x;
  }

  static double parse_double(const std::string& section, const std::string& key,
                             const std::string& v) {
    double x = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc{} || p != v.data() + v.size() || v.empty() || !std::isfinite(x)) {
      bad(section, key, v, "a finite number");
    }
    return x;
  }

  [[noreturn]] static void bad(const std::string& section, const std::string& key,
                               const std::string& v, const std::string& expected) {
    throw ValidationError("config [" + section + "] " + key + " = '" + v + "': expected " +
                          expected);
  }

 private:
  const boost::property_tree::ptree& tree_;
};

/// Shortest text that reads back to the same double.
std::string fmt_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (data.kind == DataSource::Kind::Synthetic) {
    data.synthetic.validate();
  } else if (data.files.interactions.empty() || data.files.triples.empty() ||
             data.files.item_map.empty()) {
    throw ValidationError("config: file data source needs interactions, triples and item_map");
  }
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  if (attacker != "KGAttack" && !parse_baseline(attacker)) {
    throw ValidationError("config: unknown attacker '" + attacker + "'");
  }
  if (ks.empty()) throw ValidationError("config: at least one cutoff k is required");
  for (std::size_t k : ks) {
    if (k == 0 || k > env.candidate_list_size) {
      throw ValidationError("config: cutoff k = " + std::to_string(k) + " outside [1, " +
                            std::to_string(env.candidate_list_size) + "]");
    }
  }
  if (train.k > env.candidate_list_size) {
    throw ValidationError("config: reward_k exceeds the candidate list size");
  }
  if (sweep_k == 0 || sweep_k > env.candidate_list_size) {
    throw ValidationError("config: sweep_k outside the candidate list size");
  }
  if (seeds.empty()) throw ValidationError("config: at least one seed is required");
  if (env.spy_users == 0) throw ValidationError("config: spy_users must be >= 1");
  if (env.candidate_list_size == 0) throw ValidationError("config: candidate_list_size must be >= 1");
  if (env.cooc_lambda < 0.0) throw ValidationError("config: cooc_lambda must be >= 0");
  if (env.mf.dim == 0) throw ValidationError("config: mf_dim must be >= 1");
  if (!(env.mf.lr > 0.0)) throw ValidationError("config: mf_lr must be > 0");
  if (pretrain.dim == 0 || pretrain.batch == 0) {
    throw ValidationError("config: pretrain dim and batch must be >= 1");
  }
  if (pretrain.margin < 0.0) throw ValidationError("config: pretrain margin must be >= 0");
  if (encoder.gnn_layers == 0 || encoder.hidden == 0 || encoder.max_neighbors == 0) {
    throw ValidationError("config: encoder sizes must be >= 1");
  }
  if (target_max_interactions == 0) {
    throw ValidationError("config: target_max_interactions must be >= 1");
  }
}

ExperimentConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError("config: line " + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, body] : tree) {
    const auto it = schema().find(section);
    if (it == schema().end()) {
      throw ValidationError(body.empty() ? "config: key '" + section + "' outside any section"
                                         : "config: unknown section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      if (it->second.count(key) == 0) {
        throw ValidationError("config: unknown key '" + key + "' in [" + section + "]");
      }
    }
  }

  const Reader r(tree);
  ExperimentConfig cfg;

  const auto source = r.raw("data", "source");
  if (!source) throw ValidationError("config: [data] source is required");
  if (*source == "synthetic") {
    cfg.data.kind = DataSource::Kind::Synthetic;
  } else if (*source == "files") {
    cfg.data.kind = DataSource::Kind::Files;
    cfg.data.files.interactions = r.raw("data", "interactions").value_or("");
    cfg.data.files.triples = r.raw("data", "triples").value_or("");
    cfg.data.files.item_map = r.raw("data", "item_map").value_or("");
  } else {
    Reader::bad("data", "source", *source, "'synthetic' or 'files'");
  }
  if (auto t = r.raw("data", "target")) {
    cfg.data.target = static_cast<ItemId>(Reader::parse_uint("data", "target", *t));
  }

  auto& s = cfg.data.synthetic;
  r.integer("synthetic", "user_count", s.user_count);
  r.integer("synthetic", "item_count", s.item_count);
  r.integer("synthetic", "non_item_entity_count", s.non_item_entity_count);
  r.integer("synthetic", "relation_count", s.relation_count);
  r.integer("synthetic", "interactions_per_user", s.interactions_per_user);
  r.integer("synthetic", "kg_triples_per_item", s.kg_triples_per_item);
  r.integer("synthetic", "cluster_count", s.cluster_count);
  r.real("synthetic", "in_cluster_fraction", s.in_cluster_fraction);
  r.real("synthetic", "popularity_exponent", s.popularity_exponent);
  r.integer("synthetic", "seed", s.seed);

  if (auto m = r.raw("env", "mode")) {
    if (*m == "poison") {
      cfg.env.mode = AttackMode::Poison;
    } else if (*m == "evasion") {
      cfg.env.mode = AttackMode::Evasion;
    } else {
      Reader::bad("env", "mode", *m, "'poison' or 'evasion'");
    }
  }
  r.integer("env", "spy_users", cfg.env.spy_users);
  r.integer("env", "normal_users", cfg.env.normal_users);
  r.integer("env", "candidate_list_size", cfg.env.candidate_list_size);
  r.real("env", "cooc_lambda", cfg.env.cooc_lambda);
  r.integer("env", "mf_dim", cfg.env.mf.dim);
  r.integer("env", "mf_epochs", cfg.env.mf.epochs);
  r.real("env", "mf_lr", cfg.env.mf.lr);
  r.real("env", "mf_reg", cfg.env.mf.reg);
  r.integer("env", "mf_negatives", cfg.env.mf.negatives_per_positive);
  r.real("env", "mf_init_scale", cfg.env.mf.init_scale);
  r.integer("env", "mf_seed", cfg.env.mf.seed);
  r.integer("env", "target_max_interactions", cfg.target_max_interactions);

  r.integer("pretrain", "dim", cfg.pretrain.dim);
  r.integer("pretrain", "epochs", cfg.pretrain.epochs);
  r.real("pretrain", "lr", cfg.pretrain.lr);
  r.real("pretrain", "margin", cfg.pretrain.margin);
  if (auto nrm = r.raw("pretrain", "norm")) {
    if (*nrm == "L1") {
      cfg.pretrain.norm = DistanceNorm::L1;
    } else if (*nrm == "L2") {
      cfg.pretrain.norm = DistanceNorm::L2;
    } else {
      Reader::bad("pretrain", "norm", *nrm, "'L1' or 'L2'");
    }
  }
  r.integer("pretrain", "batch", cfg.pretrain.batch);
  r.integer("pretrain", "seed", cfg.pretrain.seed);

  r.integer("encoder", "gnn_layers", cfg.encoder.gnn_layers);
  r.integer("encoder", "hidden", cfg.encoder.hidden);
  r.integer("encoder", "max_neighbors", cfg.encoder.max_neighbors);
  r.boolean("encoder", "scale_by_embedding_dim", cfg.encoder.scale_by_embedding_dim);

  if (auto a = r.raw("attack", "attacker")) cfg.attacker = *a;
  auto& t = cfg.train;
  r.integer("attack", "budget", t.budget);
  r.integer("attack", "profiles_per_episode", t.profiles_per_episode);
  r.integer("attack", "steps", t.steps);
  r.real("attack", "gamma", t.gamma);
  r.real("attack", "clip", t.clip);
  r.real("attack", "anchor_ratio", t.anchor_ratio);
  r.integer("attack", "hops", t.hops);
  r.integer("attack", "pool_size", t.pool_size);
  r.integer("attack", "reward_k", t.k);
  r.real("attack", "actor_lr", t.actor_lr);
  r.real("attack", "critic_lr", t.critic_lr);
  r.integer("attack", "ppo_epochs", t.ppo_epochs);
  r.boolean("attack", "standardize_advantages", t.standardize_advantages);
  r.real("attack", "entropy_coef", t.entropy_coef);
  r.integer("attack", "policy_hidden", t.policy_hidden);
  r.boolean("attack", "undirected_kg", t.undirected_kg);

  r.list("eval", "k", cfg.ks);
  r.list("eval", "seeds", cfg.seeds);
  r.integer("eval", "sweep_k", cfg.sweep_k);
  if (auto o = r.raw("eval", "output_dir")) cfg.output_dir = *o;

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig cfg = parse_config(ss.str());
  // Relative data paths resolve against the config file's directory.
  if (cfg.data.kind == DataSource::Kind::Files) {
    const auto base = path.parent_path();
    for (auto* p : {&cfg.data.files.interactions, &cfg.data.files.triples, &cfg.data.files.item_map})
      if (p->is_relative()) *p = base / *p;
  }
  return cfg;
}

std::string canonical_config(const ExperimentConfig& cfg) {
  std::ostringstream o;
  const auto& s = cfg.data.synthetic;
  o << "[data]\n";
  if (cfg.data.kind == DataSource::Kind::Synthetic) {
    o << "source = synthetic\n";
  } else {
    o << "source = files\n"
      << "interactions = " << cfg.data.files.interactions.generic_string() << '\n'
      << "triples = " << cfg.data.files.triples.generic_string() << '\n'
      << "item_map = " << cfg.data.files.item_map.generic_string() << '\n';
  }
  if (cfg.data.target) o << "target = " << *cfg.data.target << '\n';
  o << "\n[synthetic]\n"
    << "user_count = " << s.user_count << '\n'
    << "item_count = " << s.item_count << '\n'
    << "non_item_entity_count = " << s.non_item_entity_count << '\n'
    << "relation_count = " << s.relation_count << '\n'
    << "interactions_per_user = " << s.interactions_per_user << '\n'
    << "kg_triples_per_item = " << s.kg_triples_per_item << '\n'
    << "cluster_count = " << s.cluster_count << '\n'
    << "in_cluster_fraction = " << fmt_double(s.in_cluster_fraction) << '\n'
    << "popularity_exponent = " << fmt_double(s.popularity_exponent) << '\n'
    << "seed = " << s.seed << '\n';
  const auto& e = cfg.env;
  o << "\n[env]\n"
    << "mode = " << (e.mode == AttackMode::Poison ? "poison" : "evasion") << '\n'
    << "spy_users = " << e.spy_users << '\n'
    << "normal_users = " << e.normal_users << '\n'
    << "candidate_list_size = " << e.candidate_list_size << '\n'
    << "cooc_lambda = " << fmt_double(e.cooc_lambda) << '\n'
    << "mf_dim = " << e.mf.dim << '\n'
    << "mf_epochs = " << e.mf.epochs << '\n'
    << "mf_lr = " << fmt_double(e.mf.lr) << '\n'
    << "mf_reg = " << fmt_double(e.mf.reg) << '\n'
    << "mf_negatives = " << e.mf.negatives_per_positive << '\n'
    << "mf_init_scale = " << fmt_double(e.mf.init_scale) << '\n'
    << "mf_seed = " << e.mf.seed << '\n'
    << "target_max_interactions = " << cfg.target_max_interactions << '\n';
  const auto& p = cfg.pretrain;
  o << "\n[pretrain]\n"
    << "dim = " << p.dim << '\n'
    << "epochs = " << p.epochs << '\n'
    << "lr = " << fmt_double(p.lr) << '\n'
    << "margin = " << fmt_double(p.margin) << '\n'
    << "norm = " << (p.norm == DistanceNorm::L1 ? "L1" : "L2") << '\n'
    << "batch = " << p.batch << '\n'
    << "seed = " << p.seed << '\n';
  const auto& n = cfg.encoder;
  o << "\n[encoder]\n"
    << "gnn_layers = " << n.gnn_layers << '\n'
    << "hidden = " << n.hidden << '\n'
    << "max_neighbors = " << n.max_neighbors << '\n'
    << "scale_by_embedding_dim = " << (n.scale_by_embedding_dim ? "true" : "false") << '\n';
  const auto& t = cfg.train;
  o << "\n[attack]\n"
    << "attacker = " << cfg.attacker << '\n'
    << "budget = " << t.budget << '\n'
    << "profiles_per_episode = " << t.profiles_per_episode << '\n'
    << "steps = " << t.steps << '\n'
    << "gamma = " << fmt_double(t.gamma) << '\n'
    << "clip = " << fmt_double(t.clip) << '\n'
    << "anchor_ratio = " << fmt_double(t.anchor_ratio) << '\n'
    << "hops = " << t.hops << '\n'
    << "pool_size = " << t.pool_size << '\n'
    << "reward_k = " << t.k << '\n'
    << "actor_lr = " << fmt_double(t.actor_lr) << '\n'
    << "critic_lr = " << fmt_double(t.critic_lr) << '\n'
    << "ppo_epochs = " << t.ppo_epochs << '\n'
    << "standardize_advantages = " << (t.standardize_advantages ? "true" : "false") << '\n'
    << "entropy_coef = " << fmt_double(t.entropy_coef) << '\n'
    << "policy_hidden = " << t.policy_hidden << '\n'
    << "undirected_kg = " << (t.undirected_kg ? "true" : "false") << '\n';
  o << "\n[eval]\n"
    << "k = " << join(cfg.ks) << '\n'
    << "seeds = " << join(cfg.seeds) << '\n'
    << "sweep_k = " << cfg.sweep_k << '\n';
  return o.str();
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_config(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- experiment -------------------------------------------------------------------

Dataset load_dataset(const DataSource& source) {
  if (source.kind == DataSource::Kind::Synthetic) {
    const SyntheticData d = generate_synthetic(source.synthetic);
    return {d.graph(), d.interactions(), "synthetic"};
  }
  KnowledgeGraph g = load_kg(source.files.triples, source.files.item_map);
  InteractionMatrix y = load_interactions(source.files.interactions, g);
  return {std::move(g), std::move(y), source.files.interactions.parent_path().filename().string()};
}

ItemId choose_target(const InteractionMatrix& y, std::size_t max_interactions,
                     std::size_t spy_users, std::uint64_t seed) {
  const auto deg = y.item_degrees();
  std::vector<ItemId> eligible;
  for (ItemId v = 0; v < deg.size(); ++v) {
    if (deg[v] < max_interactions && y.original_user_count() - deg[v] > spy_users) {
      eligible.push_back(v);
    }
  }
  if (eligible.empty()) {
    throw ValidationError("no item has fewer than " + std::to_string(max_interactions) +
                          " interactions");
  }
  Rng rng = Rng::derive({seed, 0x7a6e7ULL});
  return eligible[rng.index(eligible.size())];
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

EnvConfig env_for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  EnvConfig e = cfg.env;
  e.seed = seed;
  e.mf.seed = mix64(cfg.env.mf.seed ^ mix64(seed));
  e.k = cfg.train.k;
  e.budget = cfg.train.budget;
  e.max_profile_len = cfg.train.steps + 1;
  return e;
}

std::vector<ResultRow> rows_for(const std::string& attacker, const std::vector<SeedRun>& runs,
                                const std::vector<std::size_t>& ks, bool before) {
  std::vector<ResultRow> rows;
  for (const SeedRun& run : runs) {
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const RankingMetrics& m = before ? run.before[i] : run.after[i];
      rows.push_back({attacker, std::to_string(run.seed), ks[i], m.hit_ratio, m.ndcg,
                      before ? 0 : run.budget_used, before ? 0.0 : run.wallclock_seconds});
    }
  }
  for (std::size_t i = 0; i < ks.size(); ++i) {
    std::vector<double> hr, nd, budget, wall;
    for (const SeedRun& run : runs) {
      const RankingMetrics& m = before ? run.before[i] : run.after[i];
      hr.push_back(m.hit_ratio);
      nd.push_back(m.ndcg);
      budget.push_back(before ? 0.0 : static_cast<double>(run.budget_used));
      wall.push_back(before ? 0.0 : run.wallclock_seconds);
    }
    rows.push_back({attacker, "median", ks[i], median(hr), median(nd),
                    static_cast<std::size_t>(median(budget)), median(wall)});
  }
  return rows;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_outputs) {
  cfg.validate();
  const Dataset data = stage("load data", [&] { return load_dataset(cfg.data); });
  return run_experiment(cfg, data, write_outputs);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& data,
                                bool write_outputs) {
  stage("config", [&] { cfg.validate(); });
  ExperimentResult result;
  result.config_hash = config_hash(cfg);
  const std::string comment = "# config_hash=" + result.config_hash;
  const auto baseline = parse_baseline(cfg.attacker);
  if (write_outputs) {
    std::filesystem::create_directories(cfg.output_dir);
    std::ofstream(cfg.output_dir / "config.ini", std::ios::binary)
        << "; config_hash=" << result.config_hash << '\n'
        << canonical_config(cfg);
  }

  for (std::uint64_t seed : cfg.seeds) {
    SeedRun run;
    run.seed = seed;
    run.target = stage("target selection", [&] {
      if (cfg.data.target) return *cfg.data.target;
      return choose_target(data.interactions, cfg.target_max_interactions, cfg.env.spy_users, seed);
    });
    RecommenderEnv env = stage("environment", [&] {
      return RecommenderEnv(data.interactions, run.target, env_for_seed(cfg, seed));
    });
    for (std::size_t k : cfg.ks) run.before.push_back(env.evaluate(k));

    const auto t0 = std::chrono::steady_clock::now();
    if (!baseline) {
      PretrainConfig pc = cfg.pretrain;
      pc.seed = mix64(cfg.pretrain.seed ^ mix64(seed));
      const PretrainResult emb = stage("pretrain", [&] { return pretrain_transe(data.graph, pc); });
      stage("attack", [&] {
        EncoderConfig ec = cfg.encoder;
        ec.seed = seed;
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        KgAttackAgent agent(data.graph, emb.embeddings, ec, tc);
        RunOptions opts;
        if (write_outputs) {
          opts.metrics_csv = cfg.output_dir / ("metrics_seed" + std::to_string(seed) + ".csv");
          opts.header_comment = comment;
        }
        run.trace = run_attack(env, agent, opts);
      });
    } else {
      stage("attack", [&] {
        Rng rng = Rng::derive({seed, 0xba5eULL});
        std::vector<FakeProfile> profiles;
        for (std::size_t i = 0; i < cfg.train.budget; ++i) {
          profiles.push_back(generate_baseline_profile(*baseline, run.target, data.graph,
                                                       cfg.train.steps + 1, cfg.train.hops, rng));
        }
        env.inject(profiles);
      });
    }
    run.wallclock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run.budget_used = env.injected();
    stage("evaluation", [&] {
      for (std::size_t k : cfg.ks) run.after.push_back(env.evaluate(k));
    });
    if (write_outputs) {
      stage("snapshot", [&] { env.save_snapshot(cfg.output_dir / ("env_seed" + std::to_string(seed))); });
    }
    result.runs.push_back(std::move(run));
  }

  result.rows = rows_for(cfg.attacker, result.runs, cfg.ks, false);
  result.without_attack = rows_for("WithoutAttack", result.runs, cfg.ks, true);
  if (write_outputs) {
    stage("write results", [&] { write_results_csv(cfg.output_dir / "results.csv", result); });
  }
  return result;
}

std::string results_csv_header() {
  return "attacker,seed,k,HR,NDCG,budget_used,wallclock_seconds";
}

std::string results_csv_row(const ResultRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.17g,%.17g,%zu,%.3f", r.attacker.c_str(),
                r.seed.c_str(), r.k, r.hit_ratio, r.ndcg, r.budget_used, r.wallclock_seconds);
  return buf;
}

void write_results_csv(const std::filesystem::path& path, const ExperimentResult& result) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "# config_hash=" << result.config_hash << '\n' << results_csv_header() << '\n';
  for (const auto& r : result.without_attack) out << results_csv_row(r) << '\n';
  for (const auto& r : result.rows) out << results_csv_row(r) << '\n';
}

// ---- sweeps -----------------------------------------------------------------------

std::optional<SweepAxis> parse_sweep_axis(const std::string& name) {
  if (name == "epsilon" || name == "anchor_ratio") return SweepAxis::AnchorRatio;
  if (name == "H" || name == "hops") return SweepAxis::Hops;
  if (name == "Delta" || name == "budget") return SweepAxis::Budget;
  return std::nullopt;
}

std::string sweep_axis_symbol(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::AnchorRatio: return "epsilon";
    case SweepAxis::Hops: return "H";
    case SweepAxis::Budget: return "Delta";
  }
  return "?";
}

std::vector<double> default_sweep_values(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::AnchorRatio: return {0.1, 0.3, 0.5, 0.7, 0.9};
    case SweepAxis::Hops: return {1, 2, 3, 4};
    case SweepAxis::Budget: return {0, 15, 30, 45, 60, 75};
  }
  return {};
}

SweepResult ablation_sweep(const ExperimentConfig& cfg, SweepAxis axis,
                           std::span<const double> values) {
  cfg.validate();
  const Dataset data = stage("load data", [&] { return load_dataset(cfg.data); });
  return ablation_sweep(cfg, data, axis, values);
}

SweepResult ablation_sweep(const ExperimentConfig& cfg, const Dataset& data, SweepAxis axis,
                           std::span<const double> values) {
  if (values.empty()) throw ValidationError("sweep: no values given");
  SweepResult out;
  out.axis = axis;
  out.config_hash = config_hash(cfg);
  out.dataset_label = data.label;

  std::vector<ExperimentConfig> variants;
  for (double v : values) {
    ExperimentConfig c = cfg;
    c.ks = {cfg.sweep_k};
    const bool integral = v >= 0.0 && std::floor(v) == v;
    switch (axis) {
      case SweepAxis::AnchorRatio:
        c.train.anchor_ratio = v;
        break;
      case SweepAxis::Hops:
        if (!integral || v < 1) throw ValidationError("sweep: hop values must be integers >= 1");
        c.train.hops = static_cast<std::size_t>(v);
        break;
      case SweepAxis::Budget:
        if (!integral) throw ValidationError("sweep: budget values must be non-negative integers");
        c.train.budget = static_cast<std::size_t>(v);
        break;
    }
    c.validate();
    variants.push_back(std::move(c));
  }

  for (std::size_t i = 0; i < variants.size(); ++i) {
    ExperimentResult r = run_experiment(variants[i], data, false);
    out.values.push_back(values[i]);
    out.aggregates.push_back(r.rows.back());
    if (i == 0) out.without_attack = r.without_attack.back();
    out.experiments.push_back(std::move(r));
  }
  return out;
}

std::string sweep_table(const SweepResult& sweep) {
  std::ostringstream o;
  o << sweep_axis_symbol(sweep.axis);
  for (double v : sweep.values) o << ',' << fmt_double(v);
  o << '\n' << sweep.dataset_label;
  for (const auto& r : sweep.aggregates) o << ',' << fmt_double(r.hit_ratio);
  o << '\n';
  return o.str();
}

void write_sweep(const std::filesystem::path& dir, const SweepResult& sweep) {
  std::filesystem::create_directories(dir);
  const std::string symbol = sweep_axis_symbol(sweep.axis);
  {
    std::ofstream out(dir / ("sweep_" + symbol + "_long.csv"), std::ios::binary);
    out << "# config_hash=" << sweep.config_hash << '\n'
        << symbol << ',' << results_csv_header() << '\n';
    for (std::size_t i = 0; i < sweep.values.size(); ++i) {
      const std::string v = fmt_double(sweep.values[i]);
      for (const auto& r : sweep.experiments[i].rows) out << v << ',' << results_csv_row(r) << '\n';
    }
    out << "none," << results_csv_row(sweep.without_attack) << '\n';
  }
  {
    std::ofstream out(dir / ("sweep_" + symbol + "_table.csv"), std::ios::binary);
    out << "# config_hash=" << sweep.config_hash << '\n' << sweep_table(sweep);
  }
}

}  // namespace kgattack
