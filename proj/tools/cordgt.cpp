// Command-line front end: dataset ingestion and caching, train / evaluate /
// ablate / synth / inspect / decompose subcommands, checkpoint and metrics
// I/O. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric abort.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "cordgt/checkpoint.hpp"
#include "cordgt/config.hpp"

namespace fs = std::filesystem;
using namespace cordgt;

namespace {

std::string g_save_cache;  // set via --save-cache

EventStore load_store(const RunConfig& rc) {
  if (rc.data.empty()) throw ConfigError("no dataset given (--data)");
  EventStore store =
      (rc.data.size() > 4 && rc.data.substr(rc.data.size() - 4) == ".bin")
          ? EventStore::load_cache(rc.data)
          : load_jodie_csv(rc.data, rc.bipartite);
  if (!g_save_cache.empty()) {
    store.save_cache(g_save_cache);
    std::cout << "cached store written to " << g_save_cache << std::endl;
  }
  return store;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

std::string metrics_line(const EpochMetrics& m) {
  nlohmann::json j{{"epoch", m.epoch}, {"split", m.split},
                   {"ap", m.ap},       {"auc", m.auc},
                   {"loss", m.loss},   {"wall_ms", m.wall_ms}};
  return j.dump();
}

template <class S>
int run_train(const RunConfig& rc) {
  EventStore store = load_store(rc);
  const Splits splits = chronological_split(store, to_split_spec(rc));
  TrainConfig cfg = to_train_config(rc);
  apply_ablations(cfg, rc.ablations);

  fs::create_directories(rc.out);
  std::ofstream metrics(rc.out + "/metrics.jsonl");
  const MetricsSink sink = [&](const EpochMetrics& m) {
    metrics << metrics_line(m) << "\n";
    metrics.flush();
    std::cout << metrics_line(m) << std::endl;
  };

  TrainResult<S> result = train<S>(store, splits, cfg, sink);

  prepare_ledger(store, splits, true);
  const EvalOutput test = evaluate(store, result.params, result.index,
                                   result.config, splits.test,
                                   eval_neg_seed(cfg.seed, 2));
  EpochMetrics test_m;
  test_m.epoch = result.best_epoch;
  test_m.split = "test";
  test_m.ap = test.ap;
  test_m.auc = test.auc;
  test_m.loss = test.loss;
  sink(test_m);

  nlohmann::json meta = run_config_json(rc);
  save_checkpoint(rc.out + "/checkpoint.bin", result.params, meta);
  write_text(rc.out + "/config.resolved", meta.dump(2) + "\n");
  const nlohmann::json results{{"best_val_ap", result.best_val_ap},
                               {"best_epoch", result.best_epoch},
                               {"test_ap", test.ap},
                               {"test_auc", test.auc},
                               {"initial_loss", result.initial_loss},
                               {"seed", rc.seed}};
  write_text(rc.out + "/results.json", results.dump(2) + "\n");
  std::cout << "best val AP " << result.best_val_ap << " (epoch "
            << result.best_epoch << "), test AP " << test.ap << ", test AUC "
            << test.auc << "\n"
            << "artifacts in " << rc.out << "/" << std::endl;
  return 0;
}

template <class S>
int run_evaluate(const RunConfig& rc_cli, const std::string& checkpoint,
                 const std::string& split, const std::string& task) {
  nlohmann::json meta = read_checkpoint_meta(checkpoint);
  RunConfig rc = run_config_from_json(meta);
  if (!rc_cli.data.empty()) rc.data = rc_cli.data;
  rc.bipartite = rc_cli.bipartite || rc.bipartite;
  if (!rc_cli.split_mode.empty()) rc.split_mode = rc_cli.split_mode;
  rc.threads = rc_cli.threads;

  EventStore store = load_store(rc);
  const Splits splits = chronological_split(store, to_split_spec(rc));
  TrainConfig cfg = to_train_config(rc);
  apply_ablations(cfg, rc.ablations);
  cfg = resolve(cfg, store);

  ParamSet<S> params;
  const CordgtParams index = build_params(params, cfg.model);
  load_checkpoint(checkpoint, params);

  if (task == "node") {
    const NodeClassifyResult nc = node_classify(store, params, index, cfg,
                                                splits);
    const nlohmann::json j{{"task", "node"},
                           {"auc", nc.auc},
                           {"train_events", nc.train_count},
                           {"test_events", nc.test_count}};
    std::cout << j.dump(2) << std::endl;
    return 0;
  }

  const bool use_test = split != "val";
  prepare_ledger(store, splits, use_test);
  const auto& events = use_test ? splits.test : splits.val;
  const EvalOutput out = evaluate(store, params, index, cfg, events,
                                  eval_neg_seed(cfg.seed, use_test ? 2 : 1));
  const nlohmann::json j{{"task", "link"},
                         {"split", use_test ? "test" : "val"},
                         {"protocol", rc.split_mode},
                         {"ap", out.ap},
                         {"auc", out.auc},
                         {"loss", out.loss},
                         {"positives", out.positives}};
  std::cout << j.dump(2) << std::endl;
  return 0;
}

template <class S>
int run_ablate(const RunConfig& rc) {
  EventStore store = load_store(rc);
  const Splits splits = chronological_split(store, to_split_spec(rc));
  TrainConfig cfg = to_train_config(rc);
  std::vector<std::string> variants = parse_list(rc.ablations);
  if (variants.empty()) variants = ablation_variants();

  const std::vector<AblationRow> rows =
      run_ablation<S>(store, splits, cfg, variants);
  fs::create_directories(rc.out);
  std::ostringstream csv;
  csv << "ablation,val_ap,test_ap,test_auc\n";
  for (const AblationRow& r : rows) {
    csv << r.name << "," << r.val_ap << "," << r.test_ap << "," << r.test_auc
        << "\n";
    std::cout << std::left << std::setw(16) << r.name << " val_ap "
              << r.val_ap << "  test_ap " << r.test_ap << "  test_auc "
              << r.test_auc << std::endl;
  }
  write_text(rc.out + "/ablation.csv", csv.str());
  std::cout << "table written to " << rc.out << "/ablation.csv" << std::endl;
  return 0;
}

int run_synth(const RunConfig& rc, const std::string& out_csv,
              const std::string& truth_path) {
  const SyntheticSpec spec = planted_spec(
      static_cast<NodeId>(rc.synth_nodes), rc.synth_background,
      rc.synth_planted, rc.synth_base_rate, rc.synth_boost, rc.synth_duration,
      rc.seed);
  const SyntheticResult synth = synth_generate(spec, rc.seed);
  if (synth.events.empty()) throw DataError("synth: spec produced no events");

  std::ofstream out(out_csv);
  if (!out) throw DataError("cannot write " + out_csv);
  out << "src,dst,ts,state_label\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < synth.events.size(); ++i) {
    const Event& e = synth.events[i];
    out << e.src << "," << e.dst << "," << e.ts << "," << synth.labels[i]
        << "\n";
  }

  if (!truth_path.empty()) {
    nlohmann::json truth;
    truth["num_nodes"] = spec.num_nodes;
    truth["duration"] = spec.duration;
    truth["avg_intensity"] = synth.avg_intensity;
    auto& pairs = truth["pairs"] = nlohmann::json::array();
    for (const SyntheticPair& p : spec.pairs)
      pairs.push_back({{"u", p.u}, {"v", p.v}, {"rate", p.rate},
                       {"planted", p.planted}});
    write_text(truth_path, truth.dump(2) + "\n");
  }
  std::cout << synth.events.size() << " events over " << rc.synth_nodes
            << " nodes, avg intensity " << std::scientific
            << synth.avg_intensity << ", written to " << out_csv << std::endl;
  return 0;
}

int run_inspect(const RunConfig& rc, NodeId node, double t, NodeId other) {
  EventStore store = load_store(rc);
  std::cout << "nodes " << store.num_nodes() << ", events "
            << store.num_events() << ", d_e " << store.edge_dim() << ", d_n "
            << store.node_dim() << ", duration " << store.duration() << "\n";
  std::cout << "avg interaction intensity lambda = 2|E|/(|V|T) = "
            << std::scientific << std::setprecision(4)
            << store.average_intensity() << std::defaultfloat << "\n";
  if (node < 0) return 0;
  if (node >= store.num_nodes())
    throw DataError("inspect: unknown node id " + std::to_string(node));
  if (t < 0) t = store.duration();

  TrainConfig cfg = to_train_config(rc);
  cfg = resolve(cfg, store);

  // ledger state: everything strictly before t
  std::vector<Event> prefix;
  for (const Event& e : store.events())
    if (e.ts < t) prefix.push_back(e);
  store.history().reset();
  store.history().commit(prefix);

  const ContextualSet ctx = sample_contextual(
      store, node, t, cfg.fanouts, cfg.strategy, mix_seed(cfg.seed, 0x15));
  std::cout << "contextual set of node " << node << " at t " << t << ":\n"
            << to_json(ctx).dump(2) << "\n";

  if (other >= 0 && other < store.num_nodes()) {
    const ContextualSet ctx_o = sample_contextual(
        store, other, t, cfg.fanouts, cfg.strategy, mix_seed(cfg.seed, 0x16));
    const JointAssembly a =
        assemble_joint(store, ctx, ctx_o, cfg.td, /*no_mask=*/false);
    std::cout << "token  node      hop  td->" << node << "  sd->" << node
              << "  td->" << other << "  sd->" << other << "\n";
    for (std::size_t i = 0; i < a.tokens.size(); ++i) {
      const TokenMeta& m = a.meta[i];
      if (m.pad) continue;
      std::cout << std::setw(5) << i << "  " << std::setw(8)
                << a.tokens[i].node << "  " << std::setw(3) << a.tokens[i].hop
                << "  " << std::setw(8) << std::setprecision(4) << m.td_u
                << "  " << std::setw(6) << m.sd_u << "  " << std::setw(8)
                << m.td_v << "  " << std::setw(6) << m.sd_v << "\n";
    }
  }
  return 0;
}

template <class S>
int run_decompose(const RunConfig& rc_cli, const std::string& checkpoint,
                  int max_links) {
  nlohmann::json meta = read_checkpoint_meta(checkpoint);
  RunConfig rc = run_config_from_json(meta);
  if (!rc_cli.data.empty()) rc.data = rc_cli.data;
  rc.out = rc_cli.out;
  rc.threads = rc_cli.threads;

  EventStore store = load_store(rc);
  const Splits splits = chronological_split(store, to_split_spec(rc));
  TrainConfig cfg = to_train_config(rc);
  apply_ablations(cfg, rc.ablations);
  cfg = resolve(cfg, store);

  ParamSet<S> params;
  const CordgtParams index = build_params(params, cfg.model);
  load_checkpoint(checkpoint, params);

  prepare_ledger(store, splits, true);
  const std::vector<DecompRow> rows =
      decompose_batch(store, params, index, cfg, splits.test, max_links);

  fs::create_directories(rc.out);
  std::ostringstream csv;
  csv << "td_u,td_v,sd_u,sd_v,contribution\n";
  for (const DecompRow& r : rows)
    csv << r.td_u << "," << r.td_v << "," << r.sd_u << "," << r.sd_v << ","
        << r.contribution << "\n";
  write_text(rc.out + "/decomposition.csv", csv.str());

  const Heatmap h = bucket_heatmap(rows);
  std::ostringstream hm;
  hm << "bucket_td_u,bucket_td_v,mean_contribution,count\n";
  for (int i = 0; i < Heatmap::kBuckets; ++i)
    for (int j = 0; j < Heatmap::kBuckets; ++j)
      hm << i << "," << j << "," << h.mean[i][j] << "," << h.count[i][j]
         << "\n";
  write_text(rc.out + "/heatmap.csv", hm.str());
  std::cout << rows.size() << " token contributions from "
            << std::min<std::size_t>(static_cast<std::size_t>(max_links),
                                     splits.test.size())
            << " links; wrote " << rc.out << "/decomposition.csv and "
            << rc.out << "/heatmap.csv" << std::endl;
  return 0;
}

// Resolution order: CLI flag > CORDGT_<KEY> environment variable > config
// file entry > default. CLI11 only sees the flags; the env and file layers
// are applied afterwards to every option the command line left untouched.
struct Binding {
  std::string key;
  CLI::Option* opt;
  std::function<void(const std::string&)> set;
};

std::map<const CLI::App*, std::vector<Binding>> g_bindings;
std::map<const CLI::App*, std::string> g_config_path;

template <class T>
T parse_value(const std::string& text, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "1" || text == "true" || text == "yes" || text == "on")
        return true;
      if (text == "0" || text == "false" || text == "no" || text == "off")
        return false;
      throw std::invalid_argument("bool");
    } else if constexpr (std::is_same_v<T, int>) {
      return static_cast<int>(std::stol(text));
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      return static_cast<std::uint64_t>(std::stoull(text));
    } else if constexpr (std::is_same_v<T, double>) {
      return std::stod(text);
    } else {
      return text;
    }
  } catch (const std::exception&) {
    throw ConfigError("bad value for '" + key + "': '" + text + "'");
  }
}

template <class T>
void bind_option(CLI::App* cmd, const std::string& flag, const std::string& key,
          T& target, const std::string& desc = "") {
  CLI::Option* opt;
  if constexpr (std::is_same_v<T, bool>)
    opt = cmd->add_flag(flag, target, desc);
  else
    opt = cmd->add_option(flag, target, desc);
  g_bindings[cmd].push_back(
      {key, opt, [&target, key](const std::string& text) {
         target = parse_value<T>(text, key);
       }});
}

void add_common_options(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--config", g_config_path[cmd],
                  "flat key=value config file");
  cmd->add_option("--save-cache", g_save_cache,
                  "write the ingested store to a binary cache");
  bind_option(cmd, "--data", "data", rc.data,
       "dataset CSV (JODIE layout) or .bin cache");
  bind_option(cmd, "--bipartite", "bipartite", rc.bipartite,
       "dst ids form their own space (offset past src ids)");
  bind_option(cmd, "--out", "out", rc.out, "output directory");
  bind_option(cmd, "--mode", "mode", rc.mode, "scalar mode: f32 | f64");
  bind_option(cmd, "--split", "split", rc.split_mode, "transductive | inductive");
  bind_option(cmd, "--mask-frac", "mask_frac", rc.mask_frac,
       "inductive masked-node fraction");
  bind_option(cmd, "--seed", "seed", rc.seed, "base RNG seed");
  bind_option(cmd, "--layers", "layers", rc.layers);
  bind_option(cmd, "--heads", "heads", rc.heads);
  bind_option(cmd, "--hidden", "hidden", rc.hidden);
  bind_option(cmd, "--enc-d", "enc_d", rc.enc_d, "sinusoidal half-dimension");
  bind_option(cmd, "--enc-epsilon", "enc_epsilon", rc.enc_epsilon);
  bind_option(cmd, "--d-td", "d_td", rc.d_td);
  bind_option(cmd, "--d-sd", "d_sd", rc.d_sd);
  bind_option(cmd, "--score-head", "score_head", rc.score_head, "mlp | linear");
  bind_option(cmd, "--separate-encoding", "separate_encoding", rc.separate_encoding,
       "encode each target's tokens in its own pass");
  bind_option(cmd, "--alpha", "alpha", rc.alpha);
  bind_option(cmd, "--beta", "beta", rc.beta);
  bind_option(cmd, "--td-max", "td_max", rc.td_max);
  bind_option(cmd, "--fanouts", "fanouts", rc.fanouts,
       "per-hop sample counts, e.g. 20,1");
  bind_option(cmd, "--strategy", "strategy", rc.strategy, "uniform | recent");
  bind_option(cmd, "--batch", "batch", rc.batch);
  bind_option(cmd, "--epochs", "epochs", rc.epochs);
  bind_option(cmd, "--patience", "patience", rc.patience);
  bind_option(cmd, "--lr", "lr", rc.lr);
  bind_option(cmd, "--threads", "threads", rc.threads, "0 = hardware default");
  bind_option(cmd, "--ablations", "ablations", rc.ablations,
       "comma list of variant flags to apply");
}

// Fills CLI-untouched options from the environment, then from the config
// file named by --config. Unknown file keys are rejected.
void apply_env_and_config(const CLI::App* cmd) {
  const auto it = g_bindings.find(cmd);
  if (it == g_bindings.end()) return;
  std::map<std::string, std::string> file;
  const std::string& path = g_config_path[cmd];
  if (!path.empty()) {
    file = load_flat_config(path);
    for (const auto& [key, value] : file) {
      const bool known =
          std::any_of(it->second.begin(), it->second.end(),
                      [&](const Binding& b) { return b.key == key; });
      if (!known)
        throw ConfigError("config file " + path + ": unknown key '" + key +
                          "'");
    }
  }
  for (const Binding& b : it->second) {
    if (b.opt->count() > 0) continue;  // CLI wins
    std::string env_name = "CORDGT_" + b.key;
    for (auto& c : env_name) c = static_cast<char>(std::toupper(c));
    if (const char* env = std::getenv(env_name.c_str()); env && *env) {
      b.set(env);
      continue;
    }
    if (const auto f = file.find(b.key); f != file.end()) b.set(f->second);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CorDGT: dynamic graph transformer with correlated "
               "spatial-temporal positional encoding"};
  app.require_subcommand(1);

  RunConfig rc;
  std::string checkpoint, eval_split = "test", task = "link";
  std::string synth_csv = "synth.csv", truth_path;
  NodeId inspect_node = -1, inspect_other = -1;
  double inspect_t = -1.0;
  int decompose_links = 100;

  CLI::App* c_train = app.add_subcommand("train", "train a model");
  add_common_options(c_train, rc);

  CLI::App* c_eval = app.add_subcommand("evaluate", "evaluate a checkpoint");
  add_common_options(c_eval, rc);
  c_eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  c_eval->add_option("--eval-split", eval_split, "val | test");
  c_eval->add_option("--task", task, "link | node");

  CLI::App* c_ablate = app.add_subcommand("ablate", "run ablation variants");
  add_common_options(c_ablate, rc);

  CLI::App* c_synth =
      app.add_subcommand("synth", "generate a planted-intensity dataset");
  add_common_options(c_synth, rc);
  c_synth->add_option("--synth-out", synth_csv, "output CSV path");
  c_synth->add_option("--truth", truth_path, "ground-truth intensities JSON");
  c_synth->add_option("--nodes", rc.synth_nodes)->envname("CORDGT_SYNTH_NODES");
  c_synth->add_option("--background-pairs", rc.synth_background);
  c_synth->add_option("--planted-pairs", rc.synth_planted);
  c_synth->add_option("--base-rate", rc.synth_base_rate);
  c_synth->add_option("--boost", rc.synth_boost);
  c_synth->add_option("--duration", rc.synth_duration);

  CLI::App* c_inspect =
      app.add_subcommand("inspect", "dataset statistics and contextual sets");
  add_common_options(c_inspect, rc);
  c_inspect->add_option("--node", inspect_node, "root node id");
  c_inspect->add_option("--t", inspect_t, "prediction time (default: max)");
  c_inspect->add_option("--other", inspect_other,
                        "second target for TD/SD report");

  CLI::App* c_decomp = app.add_subcommand(
      "decompose", "per-token score contributions and TD heatmap");
  add_common_options(c_decomp, rc);
  c_decomp->add_option("--checkpoint", checkpoint, "checkpoint file")
      ->required();
  c_decomp->add_option("--links", decompose_links, "links to decompose");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    for (const CLI::App* sub : app.get_subcommands()) apply_env_and_config(sub);
    const bool f64 = rc.mode == "f64";
    if (c_train->parsed())
      return f64 ? run_train<double>(rc) : run_train<float>(rc);
    if (c_eval->parsed()) {
      const nlohmann::json meta = read_checkpoint_meta(checkpoint);
      const bool ck64 = meta.value("__scalar_bytes", 4u) == 8u;
      return ck64 ? run_evaluate<double>(rc, checkpoint, eval_split, task)
                  : run_evaluate<float>(rc, checkpoint, eval_split, task);
    }
    if (c_ablate->parsed())
      return f64 ? run_ablate<double>(rc) : run_ablate<float>(rc);
    if (c_synth->parsed()) return run_synth(rc, synth_csv, truth_path);
    if (c_inspect->parsed())
      return run_inspect(rc, inspect_node, inspect_t, inspect_other);
    if (c_decomp->parsed()) {
      const nlohmann::json meta = read_checkpoint_meta(checkpoint);
      const bool ck64 = meta.value("__scalar_bytes", 4u) == 8u;
      return ck64 ? run_decompose<double>(rc, checkpoint, decompose_links)
                  : run_decompose<float>(rc, checkpoint, decompose_links);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << std::endl;
    return 4;
  }
  return 0;
}
