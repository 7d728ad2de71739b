#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "cordgt/event_store.hpp"
#include "oracles.hpp"

using namespace cordgt;

TEST_CASE("ingest sorts events and shifts the origin") {
  // unsorted input, min ts 100
  std::vector<Event> events = {{0, 1, 105.0}, {0, 2, 103.0}, {1, 2, 110.0}};
  EventStore store = EventStore::ingest(events, 3);
  CHECK(store.num_events() == 3);
  CHECK(store.events()[0].ts == doctest::Approx(0.0));  // origin shift
  CHECK(store.events()[0].src == 0);
  CHECK(store.events()[0].dst == 2);
  CHECK(store.events()[2].ts == doctest::Approx(7.0));
  // adjacency sorted per node
  const auto nb = store.neighbors_before(0, 100.0);
  REQUIRE(nb.size() == 2);
  CHECK(nb[0].ts <= nb[1].ts);
}

TEST_CASE("neighbors_before: hand-enumerated example") {
  // events (0,1,5),(0,2,3): neighbors_before(0, 6) = [(2,3),(1,5)]
  std::vector<Event> events = {{0, 1, 5.0}, {0, 2, 3.0}};
  EventStore store = EventStore::ingest(events, 3);
  // min ts shifted to 0: timestamps become 2 and 0
  const auto nb = store.neighbors_before(0, 6.0);
  REQUIRE(nb.size() == 2);
  CHECK(nb[0].node == 2);
  CHECK(nb[0].ts == doctest::Approx(0.0));
  CHECK(nb[1].node == 1);
  CHECK(nb[1].ts == doctest::Approx(2.0));
}

TEST_CASE("neighbors_before is strict and empty cases work") {
  std::vector<Event> events = {{0, 1, 5.0}, {0, 2, 7.0}};
  EventStore store = EventStore::ingest(events, 4);
  CHECK(store.neighbors_before(3, 100.0).empty());  // node with no events
  // strict inequality: event exactly at the bound excluded (shifted ts 0)
  CHECK(store.neighbors_before(0, 0.0).empty());
  const auto nb = store.neighbors_before(0, 1.0);  // between ts 0 and 2
  REQUIRE(nb.size() == 1);
  CHECK(nb[0].node == 1);
}

TEST_CASE("neighbors_before equals brute force on a random log") {
  Rng rng(41);
  std::vector<Event> events;
  for (int i = 0; i < 2000; ++i)
    events.push_back({static_cast<NodeId>(rng.below(30)),
                      static_cast<NodeId>(rng.below(30)),
                      rng.uniform(0.0, 500.0)});
  EventStore store = EventStore::ingest(events, 30);
  std::vector<Event> shifted(store.events().begin(), store.events().end());
  for (int trial = 0; trial < 200; ++trial) {
    const NodeId u = static_cast<NodeId>(rng.below(30));
    const double t = rng.uniform(0.0, 520.0);
    const auto expected = oracles::brute_neighbors_before(shifted, u, t);
    const auto got = store.neighbors_before(u, t);
    REQUIRE(got.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CHECK(got[i].ts == doctest::Approx(expected[i].second));
    }
  }
}

TEST_CASE("ingest rejects bad input") {
  CHECK_THROWS_AS(EventStore::ingest(std::vector<Event>{}, 3), DataError);
  CHECK_THROWS_AS(EventStore::ingest({{0, 5, 1.0}}, 3), DataError);  // id range
  CHECK_THROWS_AS(
      EventStore::ingest({{0, 1, std::nan("")}}, 3), DataError);  // NaN ts
  IngestData bad;
  bad.events = {{0, 1, 1.0}};
  bad.node_feats = Eigen::MatrixXd::Zero(2, 4);  // wrong row count
  CHECK_THROWS_AS(EventStore::ingest(std::move(bad), 3), DataError);
}

TEST_CASE("history: lookup, commit, order insensitivity") {
  InteractionHistory hist;
  CHECK_FALSE(hist.lookup(3, 4).has_value());  // never interacted

  std::vector<Event> batch1 = {{1, 2, 4.0}};
  hist.commit(batch1);
  auto rec = hist.lookup(1, 2);
  REQUIRE(rec.has_value());
  CHECK(rec->count == 1);
  CHECK(rec->last_ts == doctest::Approx(4.0));

  std::vector<Event> batch2 = {{2, 1, 6.0}};  // swapped order, same pair
  hist.commit(batch2);
  rec = hist.lookup(1, 2);
  REQUIRE(rec.has_value());
  CHECK(rec->count == 2);
  CHECK(rec->last_ts == doctest::Approx(6.0));
  // unordered key
  CHECK(hist.lookup(2, 1)->count == hist.lookup(1, 2)->count);
}

TEST_CASE("history: committed pair at ts 2 and 9 reads (2, 9)") {
  InteractionHistory hist;
  std::vector<Event> batch = {{5, 7, 2.0}, {7, 5, 9.0}};
  hist.commit(batch);
  const auto rec = hist.lookup(5, 7);
  REQUIRE(rec.has_value());
  CHECK(rec->count == 2);
  CHECK(rec->last_ts == doctest::Approx(9.0));
}

TEST_CASE("history rejects timestamp regression across batches") {
  InteractionHistory hist;
  std::vector<Event> batch = {{0, 1, 5.0}};
  hist.commit(batch);
  std::vector<Event> stale = {{0, 2, 3.0}};
  CHECK_THROWS_AS(hist.commit(stale), DataError);
  // equal timestamps across the boundary are fine
  std::vector<Event> tie = {{0, 2, 5.0}};
  CHECK_NOTHROW(hist.commit(tie));
}

TEST_CASE("history equals brute-force pair stats after any prefix") {
  Rng rng(91);
  std::vector<Event> events;
  for (int i = 0; i < 500; ++i)
    events.push_back({static_cast<NodeId>(rng.below(12)),
                      static_cast<NodeId>(rng.below(12)),
                      static_cast<double>(i)});
  EventStore store = EventStore::ingest(events, 12);
  const std::vector<Event> sorted(store.events().begin(), store.events().end());

  for (const std::size_t cut : {std::size_t{1}, std::size_t{77}, std::size_t{500}}) {
    store.history().reset();
    store.history().commit(std::span<const Event>(sorted.data(), cut));
    const std::vector<Event> prefix(sorted.begin(), sorted.begin() + cut);
    std::size_t distinct = 0;
    for (NodeId u = 0; u < 12; ++u) {
      for (NodeId v = u; v < 12; ++v) {
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
    }
    // ledger footprint is exactly the distinct interacting pairs
    CHECK(store.history().distinct_pairs() == distinct);
  }
}

TEST_CASE("jodie csv ingestion with features, bipartite offset, diagnostics") {
  const std::string path = "test_jodie.csv";
  {
    std::ofstream out(path);
    out << "user_id,item_id,timestamp,state_label,f0,f1\n";
    out << "0,0,100.0,0,0.5,1.0\n";
    out << "1,1,101.0,1,0.25,-1.0\n";
    out << "0,1,103.0,0,0.0,2.0\n";
  }
  EventStore store = load_jodie_csv(path, /*bipartite=*/true);
  CHECK(store.num_nodes() == 4);  // 2 users + 2 items
  CHECK(store.num_events() == 3);
  CHECK(store.edge_dim() == 2);
  CHECK(store.event(0).dst == 2);  // item 0 offset past max user id
  CHECK(store.label(1) == 1);
  CHECK(store.edge_features()(0, 1) == doctest::Approx(1.0));

  {
    std::ofstream out(path);
    out << "user_id,item_id\n0,1\n";
  }
  CHECK_THROWS_WITH_AS(load_jodie_csv(path, false),
                       doctest::Contains("ts"), DataError);
  {
    std::ofstream out(path);
    out << "src,dst,ts,state_label\n0,1,abc,0\n";
  }
  CHECK_THROWS_AS(load_jodie_csv(path, false), DataError);
  std::remove(path.c_str());
}

TEST_CASE("binary cache round trip") {
  Rng rng(7);
  IngestData data;
  for (int i = 0; i < 50; ++i)
    data.events.push_back({static_cast<NodeId>(rng.below(9)),
                           static_cast<NodeId>(rng.below(9)),
                           rng.uniform(0.0, 10.0)});
  data.edge_feats = Eigen::MatrixXd::Random(50, 3);
  data.labels.assign(50, 0);
  data.labels[7] = 1;
  data.node_feats = Eigen::MatrixXd::Random(9, 2);
  EventStore store = EventStore::ingest(std::move(data), 9);

  const std::string path = "test_store.bin";
  store.save_cache(path);
  EventStore loaded = EventStore::load_cache(path);
  CHECK(loaded.num_nodes() == store.num_nodes());
  CHECK(loaded.num_events() == store.num_events());
  CHECK(loaded.edge_dim() == store.edge_dim());
  CHECK(loaded.node_dim() == store.node_dim());
  int ones = 0;
  for (std::int64_t i = 0; i < store.num_events(); ++i) {
    CHECK(loaded.event(i).src == store.event(i).src);
    CHECK(loaded.event(i).ts == store.event(i).ts);
    CHECK(loaded.label(i) == store.label(i));
    ones += loaded.label(i);
  }
  CHECK(ones == 1);
  CHECK((loaded.edge_features() - store.edge_features()).norm() == 0.0);
  CHECK((loaded.node_features() - store.node_features()).norm() == 0.0);
  std::remove(path.c_str());

  CHECK_THROWS_AS(EventStore::load_cache("missing.bin"), DataError);
}

TEST_CASE("average intensity statistic") {
  // 2|E| / (|V| T): 4 events, 5 nodes, duration 8
  std::vector<Event> events = {{0, 1, 0.0}, {1, 2, 2.0}, {2, 3, 5.0}, {3, 4, 8.0}};
  EventStore store = EventStore::ingest(events, 5);
  CHECK(store.average_intensity() == doctest::Approx(2.0 * 4 / (5.0 * 8.0)));
}
