#pragma once

#include <chrono>
#include <functional>
#include <unordered_set>

#include "cordgt/adam.hpp"
#include "cordgt/metrics.hpp"
#include "cordgt/model.hpp"

namespace cordgt {

// --- Splitting -----------------------------------------------------------------

struct SplitSpec {
  double train_frac = 0.70;
  double val_frac = 0.15;
  enum class Mode { kTransductive, kInductive } mode = Mode::kTransductive;
  double mask_frac = 0.10;
  std::uint64_t seed = 0;
};

struct Splits {
  std::vector<std::int64_t> train, val, test;
  std::vector<std::uint8_t> masked_nodes;  // per node, inductive mode only
};

inline void inductive_filter(Splits& splits,
                             const std::vector<std::uint8_t>& masked_nodes,
                             const EventStore& store);

/// Chronological partition at T_train = 0.7 T and T_val = 0.85 T on the
/// shifted time axis; boundary-exact timestamps fall into the earlier range.
/// Inductive mode masks a uniform node sample and filters the ranges.
inline Splits chronological_split(const EventStore& store,
                                  const SplitSpec& spec) {
  const double t_total = store.duration();
  const double t_train = spec.train_frac * t_total;
  const double t_val = (spec.train_frac + spec.val_frac) * t_total;
  Splits s;
  for (const Event& e : store.events()) {
    if (e.ts <= t_train)
      s.train.push_back(e.idx);
    else if (e.ts <= t_val)
      s.val.push_back(e.idx);
    else
      s.test.push_back(e.idx);
  }
  if (s.train.empty() || s.val.empty() || s.test.empty())
    throw DataError("chronological_split: a split range came out empty");
  if (spec.mode == SplitSpec::Mode::kInductive) {
    const auto n = static_cast<std::size_t>(store.num_nodes());
    std::vector<NodeId> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<NodeId>(i);
    Rng rng(mix_seed(spec.seed, 0x1d5e));
    const std::size_t k = static_cast<std::size_t>(
        spec.mask_frac * static_cast<double>(n));
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + rng.below(n - i);
      std::swap(ids[i], ids[j]);
    }
    std::vector<std::uint8_t> masked(n, 0);
    for (std::size_t i = 0; i < k; ++i)
      masked[static_cast<std::size_t>(ids[i])] = 1;
    inductive_filter(s, masked, store);
    if (s.val.empty() || s.test.empty())
      throw DataError("chronological_split: inductive filtering emptied "
                      "val/test");
  }
  return s;
}

/// Train keeps links touching no masked node; val/test keep only links
/// touching at least one.
inline void inductive_filter(Splits& splits,
                             const std::vector<std::uint8_t>& masked_nodes,
                             const EventStore& store) {
  const auto touches = [&](std::int64_t idx) {
    const Event& e = store.event(idx);
    return masked_nodes[static_cast<std::size_t>(e.src)] ||
           masked_nodes[static_cast<std::size_t>(e.dst)];
  };
  std::erase_if(splits.train, touches);
  std::erase_if(splits.val, [&](std::int64_t i) { return !touches(i); });
  std::erase_if(splits.test, [&](std::int64_t i) { return !touches(i); });
  splits.masked_nodes = masked_nodes;
}

// --- Negative sampling -----------------------------------------------------------

/// Uniform draw over V \ {u, v}.
inline NodeId negative_sample(NodeId u, NodeId v, NodeId num_nodes, Rng& rng) {
  if (num_nodes < 3) throw DataError("negative_sample: need at least 3 nodes");
  const NodeId lo = std::min(u, v);
  const NodeId hi = std::max(u, v);
  const int excluded = (lo == hi) ? 1 : 2;
  NodeId r = static_cast<NodeId>(
      rng.below(static_cast<std::uint64_t>(num_nodes - excluded)));
  if (r >= lo) ++r;
  if (excluded == 2 && r >= hi) ++r;
  return r;
}

// --- Synthetic generator ----------------------------------------------------------

struct SyntheticPair {
  NodeId u = 0, v = 0;
  double rate = 0.0;
  bool planted = false;
};

struct SyntheticSpec {
  NodeId num_nodes = 0;
  double duration = 0.0;
  std::vector<SyntheticPair> pairs;
};

struct SyntheticResult {
  std::vector<Event> events;  // time-sorted
  std::vector<int> labels;    // 1 when src belongs to a planted pair
  double avg_intensity = 0.0;
};

/// Homogeneous Poisson draw per pair on [0, duration] via exponential gaps.
inline SyntheticResult synth_generate(const SyntheticSpec& spec,
                                      std::uint64_t seed) {
  SyntheticResult out;
  std::unordered_set<NodeId> planted_nodes;
  for (const SyntheticPair& p : spec.pairs)
    if (p.planted) {
      planted_nodes.insert(p.u);
      planted_nodes.insert(p.v);
    }
  for (std::size_t pi = 0; pi < spec.pairs.size(); ++pi) {
    const SyntheticPair& p = spec.pairs[pi];
    if (!(p.rate > 0.0)) throw ConfigError("synth: pair rate must be positive");
    Rng rng(mix_seed(seed, 0x57a7, pi));
    double t = rng.exponential(p.rate);
    while (t < spec.duration) {
      out.events.push_back({p.u, p.v, t, -1});
      t += rng.exponential(p.rate);
    }
  }
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const Event& a, const Event& b) { return a.ts < b.ts; });
  out.labels.reserve(out.events.size());
  for (const Event& e : out.events)
    out.labels.push_back(planted_nodes.count(e.src) ? 1 : 0);
  if (spec.num_nodes > 0 && spec.duration > 0.0)
    out.avg_intensity = 2.0 * static_cast<double>(out.events.size()) /
                        (static_cast<double>(spec.num_nodes) * spec.duration);
  return out;
}

/// Background pairs at `base_rate` plus a planted minority at
/// `base_rate * boost`; all pairs distinct.
inline SyntheticSpec planted_spec(NodeId num_nodes, int background_pairs,
                                  int planted_pairs, double base_rate,
                                  double boost, double duration,
                                  std::uint64_t seed) {
  if (num_nodes < 4) throw ConfigError("planted_spec: too few nodes");
  if (base_rate * duration < 1.0)
    throw ConfigError("planted_spec: expected events per pair below 1 "
                      "(rate * duration must be >= 1)");
  SyntheticSpec spec;
  spec.num_nodes = num_nodes;
  spec.duration = duration;
  Rng rng(mix_seed(seed, 0x9127));
  std::unordered_set<std::uint64_t> used;
  const auto draw_pair = [&](double rate, bool planted) {
    for (;;) {
      const NodeId u = static_cast<NodeId>(rng.below(num_nodes));
      NodeId v = static_cast<NodeId>(rng.below(num_nodes - 1));
      if (v >= u) ++v;
      const std::uint64_t key = InteractionHistory::pair_key(u, v);
      if (used.insert(key).second) {
        spec.pairs.push_back({u, v, rate, planted});
        return;
      }
    }
  };
  for (int i = 0; i < planted_pairs; ++i) draw_pair(base_rate * boost, true);
  for (int i = 0; i < background_pairs; ++i) draw_pair(base_rate, false);
  return spec;
}

inline EventStore synth_store(const SyntheticResult& synth, NodeId num_nodes) {
  IngestData data;
  data.events = synth.events;
  data.labels = synth.labels;
  return EventStore::ingest(std::move(data), num_nodes);
}

// --- Training -----------------------------------------------------------------------

struct TrainConfig {
  ModelConfig model;
  TdParams td;
  std::vector<int> fanouts{20, 1};
  SamplingStrategy strategy = SamplingStrategy::kUniform;
  int batch = 100;
  int epochs = 50;
  int patience = 3;
  double lr = 0.001;
  std::uint64_t seed = 7;
  int threads = 0;  // 0 = hardware default
  bool commit_before_forward = false;  // leak-test instrumentation only

  int resolved_threads() const {
    return threads > 0 ? threads : default_threads();
  }
};

/// Fills store-derived dimensions and the hop-dependent SD sentinel, then
/// validates. Called by every harness entry point.
inline TrainConfig resolve(TrainConfig cfg, const EventStore& store) {
  cfg.model.d_e = store.edge_dim();
  cfg.model.d_n = store.node_dim();
  cfg.td.sd_inf = 2 * static_cast<int>(cfg.fanouts.size()) + 1;
  if (cfg.fanouts.empty()) throw ConfigError("config: fanouts must be non-empty");
  for (const int f : cfg.fanouts)
    if (f < 1) throw ConfigError("config: fanouts must be >= 1");
  if (cfg.batch < 1 || cfg.epochs < 1 || cfg.patience < 1)
    throw ConfigError("config: batch/epochs/patience must be positive");
  if (!(cfg.lr > 0)) throw ConfigError("config: learning rate must be positive");
  cfg.model.validate();
  return cfg;
}

struct EpochMetrics {
  int epoch = 0;
  std::string split;
  double ap = 0.0, auc = 0.0, loss = 0.0;
  long long wall_ms = 0;
};

using MetricsSink = std::function<void(const EpochMetrics&)>;

template <class S>
struct LinkProbeInfo {
  int epoch;
  std::int64_t event_index;
  const JointAssembly& assembly;
  double pos_score;
};

template <class S>
using LinkProbe = std::function<void(const LinkProbeInfo<S>&)>;

template <class S>
struct TrainResult {
  ParamSet<S> params;
  CordgtParams index;
  TrainConfig config;  // resolved
  std::vector<EpochMetrics> log;
  double best_val_ap = 0.0;
  int best_epoch = -1;
  double initial_loss = 0.0;  // first batch, before any update
};

inline std::uint64_t eval_neg_seed(std::uint64_t seed, int split_tag) {
  return mix_seed(seed, 0xEA11, static_cast<std::uint64_t>(split_tag));
}

namespace detail {

inline long long ms_since(
    const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace detail

struct EvalOutput {
  double ap = 0.0, auc = 0.0, loss = 0.0;
  int positives = 0;
};

/// Scores a split with one fresh negative per positive, advancing the ledger
/// chronologically by committing each batch after it is scored. The caller
/// prepares the ledger to the split's start.
template <class S>
EvalOutput evaluate(EventStore& store, const ParamSet<S>& params,
                    const CordgtParams& index, const TrainConfig& cfg_in,
                    std::span<const std::int64_t> events,
                    std::uint64_t neg_seed) {
  if (events.empty()) throw DataError("evaluate: empty split");
  const TrainConfig cfg = resolve(cfg_in, store);
  const SamplingStrategy strat = cfg.model.flags.recent_sampling
                                     ? SamplingStrategy::kRecent
                                     : cfg.strategy;
  const int n = static_cast<int>(events.size());
  std::vector<double> scores(static_cast<std::size_t>(2 * n));
  std::vector<int> labels(static_cast<std::size_t>(2 * n));
  Rng neg_rng(neg_seed);
  std::vector<Event> batch_events;
  for (int batch_start = 0; batch_start < n; batch_start += cfg.batch) {
    const int batch_end = std::min(n, batch_start + cfg.batch);
    std::vector<NodeId> negatives(static_cast<std::size_t>(batch_end - batch_start));
    for (int i = batch_start; i < batch_end; ++i) {
      const Event& e = store.event(events[static_cast<std::size_t>(i)]);
      negatives[static_cast<std::size_t>(i - batch_start)] =
          negative_sample(e.src, e.dst, store.num_nodes(), neg_rng);
    }
    parallel_for(batch_end - batch_start, cfg.resolved_threads(),
                 [&](int lo, int hi, int) {
                   for (int k = lo; k < hi; ++k) {
                     const int i = batch_start + k;
                     const std::int64_t ei = events[static_cast<std::size_t>(i)];
                     const Event& e = store.event(ei);
                     const NodeId r = negatives[static_cast<std::size_t>(k)];
                     Tape<S> tape;
                     const auto sample = [&](NodeId w0, int role) {
                       return sample_contextual(
                           store, w0, e.ts, cfg.fanouts, strat,
                           mix_seed(cfg.seed, 0xE5,
                                    static_cast<std::uint64_t>(ei),
                                    static_cast<std::uint64_t>(role)));
                     };
                     const ContextualSet cu = sample(e.src, 0);
                     const ContextualSet cv = sample(e.dst, 1);
                     const ContextualSet cr = sample(r, 2);
                     auto pos = forward_link(tape, params, index, cfg.model,
                                             cfg.td, store, cu, cv);
                     auto neg = forward_link(tape, params, index, cfg.model,
                                             cfg.td, store, cu, cr);
                     scores[static_cast<std::size_t>(2 * i)] =
                         static_cast<double>(tape.val(pos.score)(0, 0));
                     labels[static_cast<std::size_t>(2 * i)] = 1;
                     scores[static_cast<std::size_t>(2 * i + 1)] =
                         static_cast<double>(tape.val(neg.score)(0, 0));
                     labels[static_cast<std::size_t>(2 * i + 1)] = 0;
                   }
                 });
    batch_events.clear();
    for (int i = batch_start; i < batch_end; ++i)
      batch_events.push_back(store.event(events[static_cast<std::size_t>(i)]));
    store.history().commit(batch_events);
  }
  EvalOutput out;
  out.ap = average_precision(scores, labels);
  out.auc = roc_auc(scores, labels);
  out.positives = n;
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double sp =
        std::clamp(scores[static_cast<std::size_t>(2 * i)], 1e-7, 1.0 - 1e-7);
    const double sn = std::clamp(scores[static_cast<std::size_t>(2 * i + 1)],
                                 1e-7, 1.0 - 1e-7);
    loss += -std::log(sp) - std::log(1.0 - sn);
  }
  out.loss = loss / n;
  return out;
}

/// Resets the ledger and commits everything chronologically before the
/// requested phase: the (filtered) train range for validation, train + val
/// for testing.
inline void prepare_ledger(EventStore& store, const Splits& splits,
                           bool include_val) {
  store.history().reset();
  std::vector<Event> prefix;
  prefix.reserve(splits.train.size() +
                 (include_val ? splits.val.size() : 0));
  for (const std::int64_t i : splits.train) prefix.push_back(store.event(i));
  if (include_val)
    for (const std::int64_t i : splits.val) prefix.push_back(store.event(i));
  store.history().commit(prefix);
}

/// The training loop: per batch, sample one negative per event, build the
/// three contextual sets, score the positive and corrupted pair from the
/// committed-only ledger, average the pair BCE, Adam-step, then commit the
/// batch. The ledger is reset at every epoch start so history never precedes
/// the batch cursor. Early stopping on validation AP with best-checkpoint
/// restore.
template <class S>
TrainResult<S> train(EventStore& store, const Splits& splits,
                     const TrainConfig& cfg_in, const MetricsSink& sink = {},
                     const LinkProbe<S>& probe = {}) {
  const TrainConfig cfg = resolve(cfg_in, store);
  const SamplingStrategy strat = cfg.model.flags.recent_sampling
                                     ? SamplingStrategy::kRecent
                                     : cfg.strategy;

  TrainResult<S> result;
  result.config = cfg;
  result.index = build_params(result.params, cfg.model);
  result.params.init_values(cfg.seed);
  ParamSet<S>& params = result.params;
  AdamState<S> adam(params, static_cast<S>(cfg.lr));

  const int workers = cfg.resolved_threads();
  std::vector<GradSet<S>> worker_grads;
  for (int w = 0; w < workers; ++w) worker_grads.emplace_back(params);
  GradSet<S> total(params);

  std::vector<Mat<S>> best_values;
  int since_best = 0;
  bool have_initial_loss = false;

  const int n_train = static_cast<int>(splits.train.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    store.history().reset();
    double loss_sum = 0.0;
    std::int64_t loss_count = 0;

    int batch_index = 0;
    for (int batch_start = 0; batch_start < n_train;
         batch_start += cfg.batch, ++batch_index) {
      const int batch_end = std::min(n_train, batch_start + cfg.batch);
      const int links = batch_end - batch_start;

      Rng neg_rng(mix_seed(cfg.seed, 0xB0, static_cast<std::uint64_t>(epoch),
                           static_cast<std::uint64_t>(batch_index)));
      std::vector<NodeId> negatives(static_cast<std::size_t>(links));
      std::vector<Event> batch_events(static_cast<std::size_t>(links));
      for (int k = 0; k < links; ++k) {
        const Event& e = store.event(
            splits.train[static_cast<std::size_t>(batch_start + k)]);
        batch_events[static_cast<std::size_t>(k)] = e;
        negatives[static_cast<std::size_t>(k)] =
            negative_sample(e.src, e.dst, store.num_nodes(), neg_rng);
      }

      if (cfg.commit_before_forward) store.history().commit(batch_events);

      std::vector<double> losses(static_cast<std::size_t>(links));
      parallel_for(links, workers, [&](int lo, int hi, int w) {
        GradSet<S>& grads = worker_grads[static_cast<std::size_t>(w)];
        for (int k = lo; k < hi; ++k) {
          const std::int64_t ei =
              splits.train[static_cast<std::size_t>(batch_start + k)];
          const Event& e = store.event(ei);
          const NodeId r = negatives[static_cast<std::size_t>(k)];
          Tape<S> tape;
          const auto sample = [&](NodeId w0, int role) {
            return sample_contextual(
                store, w0, e.ts, cfg.fanouts, strat,
                mix_seed(cfg.seed, 0xA1, static_cast<std::uint64_t>(epoch),
                         static_cast<std::uint64_t>(ei),
                         static_cast<std::uint64_t>(role)));
          };
          const ContextualSet cu = sample(e.src, 0);
          const ContextualSet cv = sample(e.dst, 1);
          const ContextualSet cr = sample(r, 2);
          auto pos = forward_link(tape, params, result.index, cfg.model,
                                  cfg.td, store, cu, cv);
          auto neg = forward_link(tape, params, result.index, cfg.model,
                                  cfg.td, store, cu, cr);
          Var loss = bce_pair(tape, pos.score, neg.score);
          losses[static_cast<std::size_t>(k)] =
              static_cast<double>(tape.val(loss)(0, 0));
          tape.backward(loss, S(1) / static_cast<S>(links));
          tape.for_each_param_grad(
              [&](int pi, const Mat<S>& g) { grads.add(pi, g); });
          if (probe)
            probe(LinkProbeInfo<S>{
                epoch, ei, pos.assembly,
                static_cast<double>(tape.val(pos.score)(0, 0))});
        }
      });

      total.zero();
      for (int w = 0; w < workers; ++w) {
        total.merge(worker_grads[static_cast<std::size_t>(w)]);
        worker_grads[static_cast<std::size_t>(w)].zero();
      }

      double batch_loss = 0.0;
      for (const double l : losses) batch_loss += l;
      batch_loss /= links;
      if (!std::isfinite(batch_loss))
        throw NumericError("training diverged: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      if (!have_initial_loss) {
        result.initial_loss = batch_loss;
        have_initial_loss = true;
      }
      loss_sum += batch_loss * links;
      loss_count += links;

      adam_step(params, total, adam);
      if (!cfg.commit_before_forward) store.history().commit(batch_events);
    }

    EpochMetrics train_m;
    train_m.epoch = epoch;
    train_m.split = "train";
    train_m.loss = loss_sum / static_cast<double>(loss_count);
    train_m.wall_ms = detail::ms_since(epoch_start);
    result.log.push_back(train_m);
    if (sink) sink(train_m);

    const auto val_start = std::chrono::steady_clock::now();
    const EvalOutput val = evaluate(store, params, result.index, cfg,
                                       splits.val, eval_neg_seed(cfg.seed, 1));
    EpochMetrics val_m;
    val_m.epoch = epoch;
    val_m.split = "val";
    val_m.ap = val.ap;
    val_m.auc = val.auc;
    val_m.loss = val.loss;
    val_m.wall_ms = detail::ms_since(val_start);
    result.log.push_back(val_m);
    if (sink) sink(val_m);

    if (val.ap > result.best_val_ap || result.best_epoch < 0) {
      result.best_val_ap = val.ap;
      result.best_epoch = epoch;
      best_values.clear();
      for (const auto& e : params.entries) best_values.push_back(e.value);
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  for (std::size_t i = 0; i < best_values.size(); ++i)
    params.entries[i].value = best_values[i];
  return result;
}

// --- Ablation orchestration -------------------------------------------------------

struct AblationRow {
  std::string name;
  double val_ap = 0.0, test_ap = 0.0, test_auc = 0.0;
};

inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> names = {
      "full",   "alpha_zero", "beta_zero", "no_td",
      "no_sd",  "stpe_u_only", "no_mask",  "recent_sampling"};
  return names;
}

inline void apply_variant(TrainConfig& cfg, const std::string& name) {
  AblationFlags& f = cfg.model.flags;
  if (name == "full") {
  } else if (name == "alpha_zero") {
    f.alpha_zero = true;
  } else if (name == "beta_zero") {
    f.beta_zero = true;
  } else if (name == "no_td") {
    f.no_td = true;
  } else if (name == "no_sd") {
    f.no_sd = true;
  } else if (name == "stpe_u_only") {
    f.stpe_u_only = true;
  } else if (name == "no_mask") {
    f.no_mask = true;
  } else if (name == "recent_sampling") {
    f.recent_sampling = true;
  } else {
    throw ConfigError("unknown ablation variant: " + name);
  }
  f.validate();
}

/// Trains and test-evaluates each requested variant with identical seeds.
template <class S>
std::vector<AblationRow> run_ablation(EventStore& store, const Splits& splits,
                                      const TrainConfig& base,
                                      const std::vector<std::string>& variants,
                                      const MetricsSink& sink = {}) {
  std::vector<AblationRow> rows;
  for (const std::string& name : variants) {
    TrainConfig cfg = base;
    apply_variant(cfg, name);
    TrainResult<S> r = train<S>(store, splits, cfg, sink);
    prepare_ledger(store, splits, true);
    const EvalOutput test =
        evaluate(store, r.params, r.index, r.config, splits.test,
                 eval_neg_seed(cfg.seed, 2));
    rows.push_back({name, r.best_val_ap, test.ap, test.auc});
  }
  return rows;
}

// --- Node classification ---------------------------------------------------------

struct NodeClassifyResult {
  double auc = 0.0;
  int train_count = 0, test_count = 0;
};

/// Dynamic node classification: embed the source node of every labeled event
/// under the frozen encoder with unitary positional encodings, then train a
/// two-layer sigmoid head with BCE and report test AUC.
template <class S>
NodeClassifyResult node_classify(EventStore& store, const ParamSet<S>& params,
                                 const CordgtParams& index,
                                 const TrainConfig& cfg_in,
                                 const Splits& splits) {
  if (!store.has_labels())
    throw DataError("node_classify: dataset has no state labels");
  const TrainConfig cfg = resolve(cfg_in, store);
  const SamplingStrategy strat = cfg.model.flags.recent_sampling
                                     ? SamplingStrategy::kRecent
                                     : cfg.strategy;
  const int d = cfg.model.hidden;

  // One chronological pass caches z(src, t) for every labeled event; the
  // encoder is frozen so the cache is valid across head epochs.
  struct Sample {
    Eigen::RowVectorXd z;
    int label;
  };
  const auto embed_range = [&](std::span<const std::int64_t> events) {
    std::vector<Sample> out(events.size());
    std::vector<Event> batch_events;
    for (std::size_t start = 0; start < events.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(
          events.size(), start + static_cast<std::size_t>(cfg.batch));
      parallel_for(
          static_cast<int>(end - start), cfg.resolved_threads(),
          [&](int lo, int hi, int) {
            for (int k = lo; k < hi; ++k) {
              const std::int64_t ei = events[start + static_cast<std::size_t>(k)];
              const Event& e = store.event(ei);
              Tape<S> tape;
              const ContextualSet ctx = sample_contextual(
                  store, e.src, e.ts, cfg.fanouts, strat,
                  mix_seed(cfg.seed, 0x4c, static_cast<std::uint64_t>(ei)));
              Var z = forward_node_embedding(tape, params, index, cfg.model,
                                             cfg.td, store, ctx);
              out[start + static_cast<std::size_t>(k)].z =
                  tape.val(z).template cast<double>().row(0);
              out[start + static_cast<std::size_t>(k)].label = store.label(ei);
            }
          });
      batch_events.clear();
      for (std::size_t i = start; i < end; ++i)
        batch_events.push_back(store.event(events[i]));
      store.history().commit(batch_events);
    }
    return out;
  };

  store.history().reset();
  const std::vector<Sample> train_z = embed_range(splits.train);
  const std::vector<Sample> val_z = embed_range(splits.val);
  const std::vector<Sample> test_z = embed_range(splits.test);

  const auto both_classes = [](const std::vector<Sample>& s) {
    bool pos = false, neg = false;
    for (const Sample& x : s) (x.label > 0 ? pos : neg) = true;
    return pos && neg;
  };
  if (!both_classes(train_z) || !both_classes(test_z))
    throw DataError("node_classify: degenerate labels (one class only)");
  // a single-class validation range cannot steer early stopping; monitor the
  // training range instead
  const std::vector<Sample>& monitor = both_classes(val_z) ? val_z : train_z;

  ParamSet<S> head;
  const MlpIdx head_idx = add_mlp(head, "classifier", d, d, 1);
  head.init_values(mix_seed(cfg.seed, 0x4e4c));
  AdamState<S> adam(head, static_cast<S>(cfg.lr));
  GradSet<S> grads(head);

  const auto head_scores = [&](const std::vector<Sample>& samples) {
    Eigen::MatrixXd z(static_cast<Eigen::Index>(samples.size()), d);
    for (std::size_t i = 0; i < samples.size(); ++i)
      z.row(static_cast<Eigen::Index>(i)) = samples[i].z;
    Tape<S> tape;
    Var s = sigmoid(tape, mlp2(tape, tape.constant(cast_mat<S>(z)), head,
                               head_idx));
    const Mat<S>& v = tape.val(s);
    std::vector<double> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
      out[i] = static_cast<double>(v(static_cast<Eigen::Index>(i), 0));
    return out;
  };
  const auto auc_of = [&](const std::vector<Sample>& samples) {
    const std::vector<double> s = head_scores(samples);
    std::vector<int> labels(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) labels[i] = samples[i].label;
    return roc_auc(s, labels);
  };

  double best_val = -1.0;
  std::vector<Mat<S>> best_values;
  int since_best = 0;
  Rng shuffle_rng(mix_seed(cfg.seed, 0x5f));
  std::vector<std::size_t> order(train_z.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(cfg.batch));
      Eigen::MatrixXd z(static_cast<Eigen::Index>(end - start), d);
      std::vector<int> labels(end - start);
      for (std::size_t i = start; i < end; ++i) {
        z.row(static_cast<Eigen::Index>(i - start)) = train_z[order[i]].z;
        labels[i - start] = train_z[order[i]].label;
      }
      Tape<S> tape;
      Var s = sigmoid(tape, mlp2(tape, tape.constant(cast_mat<S>(z)), head,
                                 head_idx));
      Var loss = bce_mean(tape, s, labels);
      tape.backward(loss);
      grads.zero();
      tape.for_each_param_grad(
          [&](int pi, const Mat<S>& g) { grads.add(pi, g); });
      adam_step(head, grads, adam);
    }
    const double val_auc = auc_of(monitor);
    if (val_auc > best_val) {
      best_val = val_auc;
      best_values.clear();
      for (const auto& e : head.entries) best_values.push_back(e.value);
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  for (std::size_t i = 0; i < best_values.size(); ++i)
    head.entries[i].value = best_values[i];

  NodeClassifyResult out;
  out.auc = auc_of(test_z);
  out.train_count = static_cast<int>(train_z.size());
  out.test_count = static_cast<int>(test_z.size());
  return out;
}

// --- Score decomposition export ------------------------------------------------------

/// Per-token contributions over the first `max_links` events of a range
/// (read-only; the caller prepares the ledger to the range start).
template <class S>
std::vector<DecompRow> decompose_batch(EventStore& store,
                                       const ParamSet<S>& params,
                                       const CordgtParams& index,
                                       const TrainConfig& cfg_in,
                                       std::span<const std::int64_t> events,
                                       int max_links) {
  const TrainConfig cfg = resolve(cfg_in, store);
  if (cfg.model.score_head != ScoreHead::kLinearDecomp)
    throw ConfigError("decompose: checkpoint was not trained with the linear "
                      "decomposition head");
  const SamplingStrategy strat = cfg.model.flags.recent_sampling
                                     ? SamplingStrategy::kRecent
                                     : cfg.strategy;
  const int n = std::min<int>(max_links, static_cast<int>(events.size()));
  std::vector<std::vector<DecompRow>> per_link(static_cast<std::size_t>(n));
  parallel_for(n, cfg.resolved_threads(), [&](int lo, int hi, int) {
    for (int k = lo; k < hi; ++k) {
      const std::int64_t ei = events[static_cast<std::size_t>(k)];
      const Event& e = store.event(ei);
      Tape<S> tape;
      const auto sample = [&](NodeId w0, int role) {
        return sample_contextual(store, w0, e.ts, cfg.fanouts, strat,
                                 mix_seed(cfg.seed, 0xD7,
                                          static_cast<std::uint64_t>(ei),
                                          static_cast<std::uint64_t>(role)));
      };
      const ContextualSet cu = sample(e.src, 0);
      const ContextualSet cv = sample(e.dst, 1);
      auto fwd = forward_link(tape, params, index, cfg.model, cfg.td, store,
                              cu, cv);
      per_link[static_cast<std::size_t>(k)] =
          decompose_scores(tape, fwd, params, index.phi);
    }
  });
  std::vector<DecompRow> rows;
  for (const auto& link_rows : per_link)
    rows.insert(rows.end(), link_rows.begin(), link_rows.end());
  return rows;
}

/// 5x5 mean-contribution heatmap over evenly split TD ranges toward each
/// target.
struct Heatmap {
  static constexpr int kBuckets = 5;
  double mean[kBuckets][kBuckets] = {};
  int count[kBuckets][kBuckets] = {};
  double td_u_lo = 0, td_u_hi = 0, td_v_lo = 0, td_v_hi = 0;
};

inline Heatmap bucket_heatmap(const std::vector<DecompRow>& rows) {
  if (rows.empty()) throw DataError("bucket_heatmap: no rows");
  Heatmap h;
  h.td_u_lo = h.td_u_hi = rows.front().td_u;
  h.td_v_lo = h.td_v_hi = rows.front().td_v;
  for (const DecompRow& r : rows) {
    h.td_u_lo = std::min(h.td_u_lo, r.td_u);
    h.td_u_hi = std::max(h.td_u_hi, r.td_u);
    h.td_v_lo = std::min(h.td_v_lo, r.td_v);
    h.td_v_hi = std::max(h.td_v_hi, r.td_v);
  }
  const auto bucket = [](double x, double lo, double hi) {
    if (hi <= lo) return 0;
    return std::min(Heatmap::kBuckets - 1,
                    static_cast<int>((x - lo) / (hi - lo) *
                                     Heatmap::kBuckets));
  };
  double sum[Heatmap::kBuckets][Heatmap::kBuckets] = {};
  for (const DecompRow& r : rows) {
    const int bu = bucket(r.td_u, h.td_u_lo, h.td_u_hi);
    const int bv = bucket(r.td_v, h.td_v_lo, h.td_v_hi);
    sum[bu][bv] += r.contribution;
    h.count[bu][bv] += 1;
  }
  for (int i = 0; i < Heatmap::kBuckets; ++i)
    for (int j = 0; j < Heatmap::kBuckets; ++j)
      h.mean[i][j] = h.count[i][j] ? sum[i][j] / h.count[i][j] : 0.0;
  return h;
}

// --- Complexity benchmarks -----------------------------------------------------------

struct ComplexityPoint {
  int ctx = 0;  // per-target contextual set size C
  double batch_ms = 0.0;
  double attention_ms = 0.0;
};

/// Times `links` link passes (forward + backward) per contextual size, and
/// separately the masked attention blocks alone on the same token layouts.
template <class S>
std::vector<ComplexityPoint> complexity_benchmark(
    EventStore& store, const TrainConfig& base,
    const std::vector<std::vector<int>>& fanout_sets, int links) {
  std::vector<ComplexityPoint> points;
  for (const auto& fanouts : fanout_sets) {
    TrainConfig cfg = base;
    cfg.fanouts = fanouts;
    cfg = resolve(cfg, store);
    ParamSet<S> params;
    const CordgtParams index = build_params(params, cfg.model);
    params.init_values(cfg.seed);
    store.history().reset();

    ComplexityPoint pt;
    pt.ctx = ContextualSet::size_for(cfg.fanouts);

    Rng rng(mix_seed(cfg.seed, 0xBE, static_cast<std::uint64_t>(pt.ctx)));
    const std::int64_t m = store.num_events();
    std::vector<JointAssembly> assemblies;
    {
      const auto start = std::chrono::steady_clock::now();
      for (int k = 0; k < links; ++k) {
        const Event& e = store.event(static_cast<std::int64_t>(
            m / 2 + rng.below(static_cast<std::uint64_t>(m / 2))));
        Tape<S> tape;
        const auto sample = [&](NodeId w0, int role) {
          return sample_contextual(store, w0, e.ts, cfg.fanouts, cfg.strategy,
                                   mix_seed(cfg.seed, 0xBF,
                                            static_cast<std::uint64_t>(k),
                                            static_cast<std::uint64_t>(role)));
        };
        const ContextualSet cu = sample(e.src, 0);
        const ContextualSet cv = sample(e.dst, 1);
        auto fwd = forward_link(tape, params, index, cfg.model, cfg.td, store,
                                cu, cv);
        tape.backward(fwd.score);
        if (k < links / 4)
          assemblies.push_back(fwd.assembly);  // reused by the attention timer
      }
      pt.batch_ms = static_cast<double>(detail::ms_since(start));
    }
    {
      // isolate the quadratic stage: scores -> mask -> softmax -> value mix,
      // per head and layer, on the real sampled masks. The O(C d^2) Q/K/V
      // projections stay outside the clock.
      Rng hrng(mix_seed(cfg.seed, 0xC0));
      const Eigen::Index tokens =
          static_cast<Eigen::Index>(assemblies.front().tokens.size());
      const Eigen::Index d = cfg.model.hidden;
      ParamSet<S> hset;
      const int qi = hset.add("bench.q", tokens, d, Init::kXavier);
      const int ki = hset.add("bench.k", tokens, d, Init::kXavier);
      const int vi = hset.add("bench.v", tokens, d, Init::kXavier);
      hset.init_values(mix_seed(cfg.seed, 0xC1));
      Mat<S> ones = Mat<S>::Ones(d, 1);
      const S inv_sqrt_d = S(1) / std::sqrt(static_cast<S>(d));
      const auto run_once = [&] {
        const auto start = std::chrono::steady_clock::now();
        int at = 0;
        for (int k = 0; k < links; ++k) {
          const JointAssembly& a =
              assemblies[static_cast<std::size_t>(at++ % assemblies.size())];
          Tape<S> tape;
          Var q = tape.param(qi, hset.value(qi));
          Var kk = tape.param(ki, hset.value(ki));
          Var v = tape.param(vi, hset.value(vi));
          Var acc;
          for (int l = 0; l < cfg.model.layers; ++l) {
            for (int h = 0; h < cfg.model.heads; ++h) {
              Var probs = row_softmax(
                  tape, masked_fill(tape, scale(tape, matmul_nt(tape, q, kk),
                                                inv_sqrt_d),
                                    a.mask.allow));
              Var mixed = matmul(tape, probs, v);
              acc = acc.valid() ? add(tape, acc, mixed) : mixed;
            }
          }
          Var out = matmul(tape, mean_rows(tape, acc), tape.constant(ones));
          tape.backward(out);
        }
        return static_cast<double>(detail::ms_since(start));
      };
      run_once();  // warm up
      pt.attention_ms = run_once();
      for (int rep = 1; rep < 3; ++rep)
        pt.attention_ms = std::min(pt.attention_ms, run_once());
    }
    points.push_back(pt);
  }
  return points;
}

/// Worst symmetric deviation of the measured points from the t = c * C^2
/// power law, with c fitted by least squares in log space (the natural
/// regression for a multiplicative factor-of-x band).
inline double quadratic_fit_worst_ratio(const std::vector<ComplexityPoint>& pts,
                                        bool attention_phase) {
  double log_sum = 0.0;
  for (const ComplexityPoint& p : pts) {
    const double t = attention_phase ? p.attention_ms : p.batch_ms;
    log_sum += std::log(t / (static_cast<double>(p.ctx) * p.ctx));
  }
  const double c = std::exp(log_sum / static_cast<double>(pts.size()));
  double worst = 1.0;
  for (const ComplexityPoint& p : pts) {
    const double t = attention_phase ? p.attention_ms : p.batch_ms;
    const double fit = c * p.ctx * p.ctx;
    worst = std::max(worst, std::max(t / fit, fit / t));
  }
  return worst;
}

struct DegreeLatency {
  int degree = 0;
  double ns_per_query = 0.0;
};

/// neighbors_before latency across per-node degrees; queries hit the same
/// high-degree node at random cut times.
inline std::vector<DegreeLatency> neighbor_latency_sweep(
    const std::vector<int>& degrees, int queries = 200000) {
  std::vector<DegreeLatency> out;
  for (const int degree : degrees) {
    std::vector<Event> events;
    events.reserve(static_cast<std::size_t>(degree));
    for (int i = 0; i < degree; ++i)
      events.push_back({0, static_cast<NodeId>(1 + i % 64),
                        static_cast<double>(i) + 1.0, -1});
    EventStore store = EventStore::ingest(std::move(events), 65);
    Rng rng(mix_seed(0xD06, static_cast<std::uint64_t>(degree)));
    std::vector<double> cuts(1024);
    for (double& c : cuts) c = rng.uniform(0.0, static_cast<double>(degree));
    std::size_t acc = 0;
    const auto start = std::chrono::steady_clock::now();
    for (int q = 0; q < queries; ++q)
      acc += store.neighbors_before(0, cuts[static_cast<std::size_t>(q) %
                                            cuts.size()]).size();
    volatile std::size_t sink = acc;
    const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    (void)sink;
    out.push_back({degree, static_cast<double>(ns) / queries});
  }
  return out;
}

}  // namespace cordgt
