#include <doctest.h>

#include <fstream>

#include "cordgt/checkpoint.hpp"
#include "cordgt/harness.hpp"
#include "oracles.hpp"

using namespace cordgt;

namespace {

TrainConfig micro_config() {
  TrainConfig cfg;
  cfg.model.layers = 1;
  cfg.model.heads = 2;
  cfg.model.hidden = 16;
  cfg.model.enc.d = 8;
  cfg.model.enc.d_td = 16;
  cfg.model.enc.d_sd = 16;
  cfg.fanouts = {5, 1};
  cfg.batch = 50;
  cfg.epochs = 2;
  cfg.seed = 7;
  cfg.threads = 2;
  return cfg;
}

EventStore micro_synth(std::uint64_t seed = 3) {
  const SyntheticSpec spec = planted_spec(30, 60, 6, 0.003, 10.0, 2000.0, seed);
  return synth_store(synth_generate(spec, seed), spec.num_nodes);
}

}  // namespace

TEST_CASE("chronological split: boundary arithmetic and the tie rule") {
  std::vector<Event> events;
  for (int i = 1; i <= 10; ++i)
    events.push_back({0, 1, static_cast<double>(i)});
  EventStore store = EventStore::ingest(events, 2);
  // shifted axis [0, 9]: T_train = 6.3, T_val = 7.65
  SplitSpec spec;
  const Splits s = chronological_split(store, spec);
  CHECK(s.train.size() == 7);  // original ts 1..7
  CHECK(s.val.size() == 1);    // ts 8
  CHECK(s.test.size() == 2);   // ts 9, 10
  // union is a partition of all events
  CHECK(s.train.size() + s.val.size() + s.test.size() ==
        static_cast<std::size_t>(store.num_events()));

  // boundary-exact timestamp goes to the earlier range
  std::vector<Event> exact;
  for (int i = 0; i <= 10; ++i) exact.push_back({0, 1, static_cast<double>(i)});
  EventStore store2 = EventStore::ingest(exact, 2);  // T = 10, boundary 7.0
  const Splits s2 = chronological_split(store2, spec);
  CHECK(s2.train.size() == 8);  // ts 0..7 inclusive
}

TEST_CASE("inductive filter: vacuous mask, single mask, brute-force counts") {
  Rng rng(44);
  std::vector<Event> events;
  for (int i = 0; i < 20; ++i)
    events.push_back({static_cast<NodeId>(rng.below(6)),
                      static_cast<NodeId>(rng.below(6)),
                      static_cast<double>(i)});
  EventStore store = EventStore::ingest(events, 6);
  SplitSpec spec;
  const Splits base = chronological_split(store, spec);

  // empty mask: train unchanged, val/test empty
  Splits vacuous = base;
  inductive_filter(vacuous, std::vector<std::uint8_t>(6, 0), store);
  CHECK(vacuous.train == base.train);
  CHECK(vacuous.val.empty());
  CHECK(vacuous.test.empty());

  // single masked node: every retained val/test link touches it, train never
  std::vector<std::uint8_t> one(6, 0);
  one[2] = 1;
  Splits single = base;
  inductive_filter(single, one, store);
  for (const auto i : single.test) {
    const Event& e = store.event(i);
    CHECK((e.src == 2 || e.dst == 2));
  }
  for (const auto i : single.train) {
    const Event& e = store.event(i);
    CHECK(e.src != 2);
    CHECK(e.dst != 2);
  }

  // counts match a brute-force filter
  std::size_t expect_train = 0, expect_val = 0, expect_test = 0;
  const auto touches = [&](std::int64_t i) {
    const Event& e = store.event(i);
    return e.src == 2 || e.dst == 2;
  };
  for (const auto i : base.train) expect_train += !touches(i);
  for (const auto i : base.val) expect_val += touches(i);
  for (const auto i : base.test) expect_test += touches(i);
  CHECK(single.train.size() == expect_train);
  CHECK(single.val.size() == expect_val);
  CHECK(single.test.size() == expect_test);
}

TEST_CASE("negative sampling: forced case, exclusion, uniformity") {
  Rng rng(10);
  CHECK(negative_sample(0, 1, 3, rng) == 2);  // the only candidate
  CHECK_THROWS_AS(negative_sample(0, 1, 2, rng), DataError);

  for (int i = 0; i < 1000; ++i) {
    const NodeId r = negative_sample(4, 9, 20, rng);
    CHECK(r != 4);
    CHECK(r != 9);
    CHECK(r < 20);
  }
  // self-loop event: only the one endpoint excluded
  bool saw_other = false;
  for (int i = 0; i < 200; ++i) {
    const NodeId r = negative_sample(5, 5, 20, rng);
    CHECK(r != 5);
    saw_other = saw_other || (r == 4);
  }
  CHECK(saw_other);

  std::vector<int> counts(100, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) counts[negative_sample(3, 7, 100, rng)] += 1;
  CHECK(counts[3] == 0);
  CHECK(counts[7] == 0);
  const double expected = static_cast<double>(draws) / 98.0;
  for (int v = 0; v < 100; ++v) {
    if (v == 3 || v == 7) continue;
    CHECK(std::abs(counts[v] / static_cast<double>(draws) - 1.0 / 98.0) <=
          0.02);
    CHECK(counts[v] > 0.2 * expected);
  }
}

TEST_CASE("synthetic generator: Poisson concentration and exponential gaps") {
  // lambda T = 1000: count within +/- 100 in at least 95 of 100 seeds
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SyntheticSpec spec;
    spec.num_nodes = 2;
    spec.duration = 1000.0;
    spec.pairs = {{0, 1, 1.0, false}};
    const auto r = synth_generate(spec, seed);
    const auto n = static_cast<std::int64_t>(r.events.size());
    if (std::abs(n - 1000) <= 100) ++ok;
  }
  CHECK(ok >= 95);

  // inter-arrival sample mean within 10% of 1/lambda
  SyntheticSpec spec;
  spec.num_nodes = 2;
  spec.duration = 500.0;
  spec.pairs = {{0, 1, 2.0, false}};
  const auto r = synth_generate(spec, 99);
  REQUIRE(r.events.size() >= 500);
  double mean_gap = r.events.front().ts;
  for (std::size_t i = 1; i < r.events.size(); ++i)
    mean_gap += r.events[i].ts - r.events[i - 1].ts;
  mean_gap /= static_cast<double>(r.events.size());
  CHECK(std::abs(mean_gap - 0.5) <= 0.05);

  // empty spec gives an empty log
  SyntheticSpec empty;
  empty.num_nodes = 5;
  empty.duration = 10.0;
  CHECK(synth_generate(empty, 1).events.empty());
}

TEST_CASE("planted spec: distinct pairs, boosted minority, labels") {
  const SyntheticSpec spec = planted_spec(40, 100, 8, 0.01, 10.0, 300.0, 5);
  CHECK(spec.pairs.size() == 108);
  std::unordered_set<std::uint64_t> seen;
  int planted = 0;
  for (const auto& p : spec.pairs) {
    CHECK(seen.insert(InteractionHistory::pair_key(p.u, p.v)).second);
    if (p.planted) {
      ++planted;
      CHECK(p.rate == doctest::Approx(0.1));
    } else {
      CHECK(p.rate == doctest::Approx(0.01));
    }
  }
  CHECK(planted == 8);

  const auto r = synth_generate(spec, 5);
  std::unordered_set<NodeId> hot;
  for (const auto& p : spec.pairs)
    if (p.planted) {
      hot.insert(p.u);
      hot.insert(p.v);
    }
  for (std::size_t i = 0; i < r.events.size(); ++i)
    CHECK(r.labels[i] == (hot.count(r.events[i].src) ? 1 : 0));
}

TEST_CASE("evaluate rejects an empty split and advances the ledger") {
  EventStore store = micro_synth();
  const Splits splits = chronological_split(store, SplitSpec{});
  TrainConfig cfg = micro_config();
  cfg.epochs = 1;
  const TrainResult<double> r = train<double>(store, splits, cfg);

  CHECK_THROWS_AS(
      evaluate(store, r.params, r.index, cfg,
               std::span<const std::int64_t>{}, 1),
      DataError);

  prepare_ledger(store, splits, false);
  const std::size_t before = store.history().distinct_pairs();
  const double committed_before = store.history().committed_through();
  evaluate(store, r.params, r.index, cfg, splits.val, 3);
  CHECK(store.history().committed_through() >= committed_before);
  CHECK(store.history().distinct_pairs() >= before);
  // after walking val, the ledger reflects train + val exactly
  const Event& last_val = store.event(splits.val.back());
  CHECK(store.history().committed_through() == doctest::Approx(last_val.ts));
}

TEST_CASE("leak rule: forward sees only committed batches; inverted order is "
          "detectable") {
  // the probed pair (0, 4) interacts for the first time inside the training
  // batch (twice, at one timestamp). Under the default ordering its forward
  // sees no history and TD sits at the sentinel; with commit-before-forward
  // the pair is already in the ledger and TD drops below the sentinel within
  // the same batch.
  std::vector<Event> events;
  for (int i = 0; i < 6; ++i)
    events.push_back({static_cast<NodeId>(i % 3), static_cast<NodeId>(3 + i % 2),
                      static_cast<double>(i) * 0.1});
  events.push_back({0, 4, 10.0});
  events.push_back({0, 4, 10.0});
  events.push_back({1, 2, 12.0});
  events.push_back({1, 2, 13.0});
  EventStore store = EventStore::ingest(events, 5);

  Splits splits;
  // only the probe-pair events train; earlier events stay in the store for
  // context sampling but are never committed
  splits.train = {6, 7};
  splits.val = {8};
  splits.test = {9};

  TrainConfig cfg = micro_config();
  cfg.epochs = 1;
  cfg.batch = 100;  // the whole training range in one batch
  cfg.threads = 1;
  const double sentinel = cfg.td.td_sentinel();

  const auto probe_td = [&](bool invert) {
    double td_seen = -1.0;
    TrainConfig c = cfg;
    c.commit_before_forward = invert;
    const LinkProbe<double> probe = [&](const LinkProbeInfo<double>& info) {
      const Event& e = store.event(info.event_index);
      if (!(e.src == 0 && e.dst == 4)) return;
      // token 0 is the root u; td_v is TD(u, v, t_pred)
      td_seen = std::max(td_seen, info.assembly.meta[0].td_v);
    };
    train<double>(store, splits, c, {}, probe);
    return td_seen;
  };

  const double td_default = probe_td(false);
  const double td_inverted = probe_td(true);
  REQUIRE(td_default >= 0.0);
  REQUIRE(td_inverted >= 0.0);
  CHECK(td_default == doctest::Approx(sentinel));  // batch not yet committed
  CHECK(td_inverted < sentinel);                   // leak detector fires
}

TEST_CASE("ledger at epoch end equals brute-force stats of training events") {
  EventStore store = micro_synth(11);
  const Splits splits = chronological_split(store, SplitSpec{});
  TrainConfig cfg = micro_config();
  cfg.epochs = 1;

  bool checked = false;
  const MetricsSink sink = [&](const EpochMetrics& m) {
    if (m.split != "train") return;
    // fires after the last batch commit, before validation walks the ledger
    std::vector<Event> prefix;
    for (const auto i : splits.train) prefix.push_back(store.event(i));
    std::size_t distinct = 0;
    for (NodeId u = 0; u < store.num_nodes(); ++u)
      for (NodeId v = u; v < store.num_nodes(); ++v) {
        const auto [n, tmax] = oracles::brute_pair_stats(prefix, u, v);
        const auto rec = store.history().lookup(u, v);
        if (n == 0) {
          CHECK_FALSE(rec.has_value());
        } else {
          ++distinct;
          REQUIRE(rec.has_value());
          CHECK(rec->count == n);
          CHECK(rec->last_ts == doctest::Approx(tmax));
        }
      }
    CHECK(store.history().distinct_pairs() == distinct);
    checked = true;
  };
  train<double>(store, splits, cfg, sink);
  CHECK(checked);
}

TEST_CASE("training descends and early stopping restores the best epoch") {
  EventStore store = micro_synth(21);
  const Splits splits = chronological_split(store, SplitSpec{});
  TrainConfig cfg = micro_config();
  cfg.epochs = 3;
  const TrainResult<double> r = train<double>(store, splits, cfg);

  REQUIRE(!r.log.empty());
  double epoch1_loss = -1.0;
  double best_val = -1.0;
  for (const auto& m : r.log) {
    if (m.split == "train" && m.epoch == 1) epoch1_loss = m.loss;
    if (m.split == "val") best_val = std::max(best_val, m.ap);
  }
  CHECK(epoch1_loss < r.initial_loss);  // descent sanity
  CHECK(r.best_val_ap == doctest::Approx(best_val));
  CHECK(r.best_epoch >= 1);
}

TEST_CASE("same seed reproduces training bit-for-bit; ablations change it") {
  EventStore store = micro_synth(31);
  const Splits splits = chronological_split(store, SplitSpec{});
  TrainConfig cfg = micro_config();
  cfg.epochs = 1;

  const TrainResult<double> a = train<double>(store, splits, cfg);
  const TrainResult<double> b = train<double>(store, splits, cfg);
  CHECK(a.best_val_ap == b.best_val_ap);
  for (std::size_t i = 0; i < a.params.count(); ++i)
    CHECK((a.params.value(static_cast<int>(i)) -
           b.params.value(static_cast<int>(i)))
              .norm() == 0.0);

  TrainConfig masked = cfg;
  apply_variant(masked, "no_mask");
  const TrainResult<double> c = train<double>(store, splits, masked);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params.count(); ++i)
    any_diff = any_diff || (a.params.value(static_cast<int>(i)) -
                            c.params.value(static_cast<int>(i)))
                                   .norm() != 0.0;
  CHECK(any_diff);
}

TEST_CASE("ablation flags: conflicts rejected, unknown names rejected") {
  TrainConfig cfg = micro_config();
  apply_variant(cfg, "no_td");
  CHECK_THROWS_AS(apply_variant(cfg, "alpha_zero"), ConfigError);
  TrainConfig cfg2 = micro_config();
  CHECK_THROWS_AS(apply_variant(cfg2, "drop_everything"), ConfigError);
  TrainConfig cfg3 = micro_config();
  apply_variant(cfg3, "no_sd");
  CHECK_THROWS_AS(apply_variant(cfg3, "no_td"), ConfigError);
}

TEST_CASE("node classification: degenerate labels are rejected, encoder "
          "stays frozen") {
  EventStore store = micro_synth(41);
  const Splits splits = chronological_split(store, SplitSpec{});
  TrainConfig cfg = micro_config();
  cfg.epochs = 1;
  const TrainResult<double> r = train<double>(store, splits, cfg);

  // all-same-label input: rejected
  {
    IngestData flat;
    for (const Event& e : store.events()) flat.events.push_back(e);
    flat.labels.assign(flat.events.size(), 1);
    EventStore degenerate = EventStore::ingest(std::move(flat),
                                               store.num_nodes());
    const Splits dsplits = chronological_split(degenerate, SplitSpec{});
    CHECK_THROWS_AS(
        node_classify(degenerate, r.params, r.index, cfg, dsplits),
        DataError);
  }

  std::vector<Mat<double>> snapshot;
  for (const auto& e : r.params.entries) snapshot.push_back(e.value);
  const NodeClassifyResult nc =
      node_classify(store, r.params, r.index, cfg, splits);
  CHECK(nc.auc > 0.0);
  CHECK(nc.train_count == static_cast<int>(splits.train.size()));
  for (std::size_t i = 0; i < snapshot.size(); ++i)
    CHECK(std::memcmp(snapshot[i].data(),
                      r.params.value(static_cast<int>(i)).data(),
                      sizeof(double) *
                          static_cast<std::size_t>(snapshot[i].size())) == 0);
}

TEST_CASE("node classification separates planted high-intensity nodes") {
  // labels mark sources belonging to strongly boosted pairs; their contexts
  // carry much smaller temporal distances, which the frozen encoder exposes
  const SyntheticSpec spec = planted_spec(40, 120, 6, 0.002, 40.0, 3000.0, 3);
  EventStore store = synth_store(synth_generate(spec, 3), spec.num_nodes);
  const Splits splits = chronological_split(store, SplitSpec{});
  TrainConfig cfg = micro_config();
  cfg.seed = 3;
  cfg.fanouts = {8, 1};
  cfg.epochs = 3;
  const TrainResult<float> r = train<float>(store, splits, cfg);
  const NodeClassifyResult nc =
      node_classify(store, r.params, r.index, cfg, splits);
  CHECK(nc.auc >= 0.9);
}

TEST_CASE("checkpoints round-trip byte-identically") {
  EventStore store = micro_synth(51);
  TrainConfig cfg = resolve(micro_config(), store);
  ParamSet<double> params;
  const CordgtParams index = build_params(params, cfg.model);
  (void)index;
  params.init_values(99);
  const nlohmann::json meta{{"seed", 99}, {"hidden", cfg.model.hidden}};

  save_checkpoint("ckpt_a.bin", params, meta);
  ParamSet<double> loaded;
  build_params(loaded, cfg.model);
  const nlohmann::json meta2 = load_checkpoint("ckpt_a.bin", loaded);
  CHECK(meta2["seed"] == 99);
  save_checkpoint("ckpt_b.bin", loaded, meta2);

  std::ifstream a("ckpt_a.bin", std::ios::binary);
  std::ifstream b("ckpt_b.bin", std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)),
                            std::istreambuf_iterator<char>());
  const std::string bytes_b((std::istreambuf_iterator<char>(b)),
                            std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);
  std::remove("ckpt_a.bin");
  std::remove("ckpt_b.bin");

  // shape mismatch between checkpoint and config is rejected
  TrainConfig other = cfg;
  other.model.hidden = 8;
  ParamSet<double> wrong;
  build_params(wrong, other.model);
  save_checkpoint("ckpt_c.bin", params, meta);
  CHECK_THROWS_AS(load_checkpoint("ckpt_c.bin", wrong), DataError);
  std::remove("ckpt_c.bin");
}

TEST_CASE("labels missing: node classification refuses") {
  std::vector<Event> events;
  for (int i = 0; i < 40; ++i)
    events.push_back({static_cast<NodeId>(i % 4),
                      static_cast<NodeId>((i + 1) % 4),
                      static_cast<double>(i)});
  EventStore store = EventStore::ingest(events, 4);
  const Splits splits = chronological_split(store, SplitSpec{});
  TrainConfig cfg = micro_config();
  cfg.epochs = 1;
  cfg.fanouts = {3};
  const TrainResult<double> r = train<double>(store, splits, cfg);
  CHECK_THROWS_AS(node_classify(store, r.params, r.index, cfg, splits),
                  DataError);
}
