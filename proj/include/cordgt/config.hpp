#pragma once

#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cordgt/harness.hpp"

namespace cordgt {

/// Flat run configuration shared by every subcommand. Resolution order is
/// CLI flag > CORDGT_* environment variable > config file > default; the
/// wiring lives in the CLI front end, this struct holds the resolved values.
struct RunConfig {
  std::string data;                       // CSV or .bin cache path
  bool bipartite = false;
  std::string out = "out";
  std::string mode = "f32";               // f32 | f64
  std::string split_mode = "transductive";
  double mask_frac = 0.10;
  std::uint64_t seed = 7;

  int layers = 2, heads = 6, hidden = 64;
  int enc_d = 50;
  double enc_epsilon = 10000.0;
  int d_td = 100, d_sd = 100;
  std::string score_head = "mlp";         // mlp | linear
  bool separate_encoding = false;

  double alpha = 1.0, beta = 10.0, td_max = 10.0;

  std::string fanouts = "20,1";
  std::string strategy = "uniform";       // uniform | recent

  int batch = 100, epochs = 50, patience = 3;
  double lr = 0.001;
  int threads = 0;
  std::string ablations;                  // comma list for the ablate command

  int synth_nodes = 200;
  int synth_background = 3000;
  int synth_planted = 20;
  double synth_base_rate = 3e-4;
  double synth_boost = 10.0;
  double synth_duration = 20000.0;
};

/// Flat `key=value` config file: one pair per line, '#' comments, blank
/// lines ignored.
inline std::map<std::string, std::string> load_flat_config(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  const auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line.substr(0, line.find('#')));
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key=value");
    out[trim(stripped.substr(0, eq))] = trim(stripped.substr(eq + 1));
  }
  return out;
}

inline std::vector<int> parse_fanouts(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("bad fanouts entry: '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("fanouts must be non-empty");
  return out;
}

inline std::vector<std::string> parse_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline TrainConfig to_train_config(const RunConfig& rc) {
  TrainConfig cfg;
  cfg.model.layers = rc.layers;
  cfg.model.heads = rc.heads;
  cfg.model.hidden = rc.hidden;
  cfg.model.enc.d = rc.enc_d;
  cfg.model.enc.epsilon = rc.enc_epsilon;
  cfg.model.enc.d_td = rc.d_td;
  cfg.model.enc.d_sd = rc.d_sd;
  cfg.model.joint_encoding = !rc.separate_encoding;
  if (rc.score_head == "mlp")
    cfg.model.score_head = ScoreHead::kMlp;
  else if (rc.score_head == "linear")
    cfg.model.score_head = ScoreHead::kLinearDecomp;
  else
    throw ConfigError("score_head must be mlp or linear, got '" +
                      rc.score_head + "'");
  cfg.td.alpha = rc.alpha;
  cfg.td.beta = rc.beta;
  cfg.td.td_max = rc.td_max;
  cfg.fanouts = parse_fanouts(rc.fanouts);
  if (rc.strategy == "uniform")
    cfg.strategy = SamplingStrategy::kUniform;
  else if (rc.strategy == "recent")
    cfg.strategy = SamplingStrategy::kRecent;
  else
    throw ConfigError("strategy must be uniform or recent, got '" +
                      rc.strategy + "'");
  cfg.batch = rc.batch;
  cfg.epochs = rc.epochs;
  cfg.patience = rc.patience;
  cfg.lr = rc.lr;
  cfg.seed = rc.seed;
  cfg.threads = rc.threads;
  if (!(rc.alpha >= 0.0) || !(rc.beta >= 0.0))
    throw ConfigError("alpha/beta must be non-negative");
  if (rc.mode != "f32" && rc.mode != "f64")
    throw ConfigError("mode must be f32 or f64, got '" + rc.mode + "'");
  return cfg;
}

inline SplitSpec to_split_spec(const RunConfig& rc) {
  SplitSpec spec;
  if (rc.split_mode == "transductive")
    spec.mode = SplitSpec::Mode::kTransductive;
  else if (rc.split_mode == "inductive")
    spec.mode = SplitSpec::Mode::kInductive;
  else
    throw ConfigError("split mode must be transductive or inductive, got '" +
                      rc.split_mode + "'");
  spec.mask_frac = rc.mask_frac;
  spec.seed = rc.seed;
  return spec;
}

inline nlohmann::json run_config_json(const RunConfig& rc) {
  return nlohmann::json{
      {"data", rc.data},
      {"bipartite", rc.bipartite},
      {"mode", rc.mode},
      {"split_mode", rc.split_mode},
      {"mask_frac", rc.mask_frac},
      {"seed", rc.seed},
      {"layers", rc.layers},
      {"heads", rc.heads},
      {"hidden", rc.hidden},
      {"enc_d", rc.enc_d},
      {"enc_epsilon", rc.enc_epsilon},
      {"d_td", rc.d_td},
      {"d_sd", rc.d_sd},
      {"score_head", rc.score_head},
      {"separate_encoding", rc.separate_encoding},
      {"alpha", rc.alpha},
      {"beta", rc.beta},
      {"td_max", rc.td_max},
      {"fanouts", rc.fanouts},
      {"strategy", rc.strategy},
      {"batch", rc.batch},
      {"epochs", rc.epochs},
      {"patience", rc.patience},
      {"lr", rc.lr},
      {"threads", rc.threads},
      {"ablations", rc.ablations},
  };
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig rc;
  rc.data = j.value("data", rc.data);
  rc.bipartite = j.value("bipartite", rc.bipartite);
  rc.mode = j.value("mode", rc.mode);
  rc.split_mode = j.value("split_mode", rc.split_mode);
  rc.mask_frac = j.value("mask_frac", rc.mask_frac);
  rc.seed = j.value("seed", rc.seed);
  rc.layers = j.value("layers", rc.layers);
  rc.heads = j.value("heads", rc.heads);
  rc.hidden = j.value("hidden", rc.hidden);
  rc.enc_d = j.value("enc_d", rc.enc_d);
  rc.enc_epsilon = j.value("enc_epsilon", rc.enc_epsilon);
  rc.d_td = j.value("d_td", rc.d_td);
  rc.d_sd = j.value("d_sd", rc.d_sd);
  rc.score_head = j.value("score_head", rc.score_head);
  rc.separate_encoding = j.value("separate_encoding", rc.separate_encoding);
  rc.alpha = j.value("alpha", rc.alpha);
  rc.beta = j.value("beta", rc.beta);
  rc.td_max = j.value("td_max", rc.td_max);
  rc.fanouts = j.value("fanouts", rc.fanouts);
  rc.strategy = j.value("strategy", rc.strategy);
  rc.batch = j.value("batch", rc.batch);
  rc.epochs = j.value("epochs", rc.epochs);
  rc.patience = j.value("patience", rc.patience);
  rc.lr = j.value("lr", rc.lr);
  rc.threads = j.value("threads", rc.threads);
  rc.ablations = j.value("ablations", rc.ablations);
  return rc;
}

/// Apply the ablation list (comma separated variant names) to a config.
inline void apply_ablations(TrainConfig& cfg, const std::string& list) {
  for (const std::string& name : parse_list(list)) apply_variant(cfg, name);
}

}  // namespace cordgt
