#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "cordgt/core.hpp"

namespace cordgt {

/// One interaction of the event log. `idx` is the position in the sorted
/// store; ties at equal timestamps keep the input order.
struct Event {
  NodeId src = 0;
  NodeId dst = 0;
  double ts = 0.0;
  std::int64_t idx = -1;
};

struct PairRecord {
  std::int64_t count = 0;  // interactions committed so far
  double last_ts = 0.0;    // timestamp of the most recent one
};

/// Sparse pair ledger: unordered {u,v} -> (count, last timestamp). Holds
/// interactions only up to the last committed batch, never in-flight ones.
class InteractionHistory {
 public:
  static std::uint64_t pair_key(NodeId u, NodeId v) {
    const std::uint64_t lo = static_cast<std::uint32_t>(std::min(u, v));
    const std::uint64_t hi = static_cast<std::uint32_t>(std::max(u, v));
    return (hi << 32) | lo;
  }

  std::optional<PairRecord> lookup(NodeId u, NodeId v) const {
    const auto it = records_.find(pair_key(u, v));
    if (it == records_.end()) return std::nullopt;
    return it->second;
  }

  // Batch timestamps must not regress below the last committed batch.
  void commit(std::span<const Event> batch) {
    for (const Event& e : batch) {
      if (e.ts < committed_through_)
        throw DataError("history_commit: batch timestamp " +
                        std::to_string(e.ts) + " precedes committed ts " +
                        std::to_string(committed_through_));
      auto& rec = records_[pair_key(e.src, e.dst)];
      rec.count += 1;
      rec.last_ts = e.ts;
      committed_through_ = std::max(committed_through_, e.ts);
    }
  }

  void reset() {
    records_.clear();
    committed_through_ = -std::numeric_limits<double>::infinity();
  }

  std::size_t distinct_pairs() const { return records_.size(); }
  double committed_through() const { return committed_through_; }

 private:
  std::unordered_map<std::uint64_t, PairRecord> records_;
  double committed_through_ = -std::numeric_limits<double>::infinity();
};

struct NeighborEntry {
  NodeId node;
  double ts;
  std::int64_t event_idx;
};

struct IngestData {
  std::vector<Event> events;
  Eigen::MatrixXd edge_feats;  // (#events x d_e) in input order; 0x0 when none
  std::vector<int> labels;     // optional state labels, empty or #events
  Eigen::MatrixXd node_feats;  // (N x d_n); 0x0 when none
};

/// Immutable, time-sorted interaction log with per-node adjacency and the
/// mutable pair ledger. Timestamps are shifted so the dataset minimum is 0.
/// Reads (neighbors_before, history lookups) are safe under concurrent
/// readers; history().commit requires exclusive access.
class EventStore {
 public:
  static EventStore ingest(IngestData in, NodeId num_nodes) {
    if (in.events.empty()) throw DataError("ingest: empty event list");
    if (num_nodes <= 0) throw DataError("ingest: num_nodes must be positive");

    const std::int64_t m = static_cast<std::int64_t>(in.events.size());
    const bool has_edge_feats = in.edge_feats.size() > 0;
    if (has_edge_feats && in.edge_feats.rows() != m)
      throw DataError("ingest: edge feature row count != event count");
    if (!in.labels.empty() &&
        static_cast<std::int64_t>(in.labels.size()) != m)
      throw DataError("ingest: label count != event count");
    if (in.node_feats.size() > 0 && in.node_feats.rows() != num_nodes)
      throw DataError("ingest: node feature row count != num_nodes");

    double min_ts = std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < m; ++i) {
      Event& e = in.events[static_cast<std::size_t>(i)];
      if (!std::isfinite(e.ts))
        throw DataError("ingest: non-finite timestamp at input row " +
                        std::to_string(i));
      if (e.src < 0 || e.src >= num_nodes || e.dst < 0 || e.dst >= num_nodes)
        throw DataError("ingest: node id out of range at input row " +
                        std::to_string(i));
      e.idx = i;  // input ordinal, used only for stable tie-breaking
      min_ts = std::min(min_ts, e.ts);
    }

    std::vector<std::size_t> order(static_cast<std::size_t>(m));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const Event& ea = in.events[a];
      const Event& eb = in.events[b];
      if (ea.ts != eb.ts) return ea.ts < eb.ts;
      return ea.idx < eb.idx;
    });

    EventStore store;
    store.num_nodes_ = num_nodes;
    store.events_.resize(static_cast<std::size_t>(m));
    if (has_edge_feats) store.edge_feats_.resize(m, in.edge_feats.cols());
    if (!in.labels.empty()) store.labels_.resize(static_cast<std::size_t>(m));
    for (std::int64_t k = 0; k < m; ++k) {
      const std::size_t src_row = order[static_cast<std::size_t>(k)];
      Event e = in.events[src_row];
      e.ts -= min_ts;
      e.idx = k;  // renumbered to sorted position
      store.events_[static_cast<std::size_t>(k)] = e;
      if (has_edge_feats) store.edge_feats_.row(k) = in.edge_feats.row(
          static_cast<Eigen::Index>(src_row));
      if (!in.labels.empty())
        store.labels_[static_cast<std::size_t>(k)] = in.labels[src_row];
    }
    store.node_feats_ = std::move(in.node_feats);
    store.t_max_ = store.events_.back().ts;
    store.build_adjacency();
    return store;
  }

  static EventStore ingest(std::vector<Event> events, NodeId num_nodes) {
    IngestData in;
    in.events = std::move(events);
    return ingest(std::move(in), num_nodes);
  }

  /// Adjacency entries of `u` strictly before `t`, ascending by timestamp.
  /// Binary search for the cut; the returned span aliases store memory.
  std::span<const NeighborEntry> neighbors_before(NodeId u, double t) const {
    const auto& list = adj_[static_cast<std::size_t>(u)];
    const auto cut = std::lower_bound(
        list.begin(), list.end(), t,
        [](const NeighborEntry& e, double bound) { return e.ts < bound; });
    return {list.data(), static_cast<std::size_t>(cut - list.begin())};
  }

  std::span<const Event> events() const { return events_; }
  const Event& event(std::int64_t idx) const {
    return events_[static_cast<std::size_t>(idx)];
  }

  NodeId num_nodes() const { return num_nodes_; }
  std::int64_t num_events() const {
    return static_cast<std::int64_t>(events_.size());
  }
  Eigen::Index edge_dim() const { return edge_feats_.cols(); }
  Eigen::Index node_dim() const { return node_feats_.cols(); }
  double duration() const { return t_max_; }

  /// Dataset statistic lambda = 2|E| / (|V| * T).
  double average_intensity() const {
    if (t_max_ <= 0.0) return 0.0;
    return 2.0 * static_cast<double>(num_events()) /
           (static_cast<double>(num_nodes_) * t_max_);
  }

  const Eigen::MatrixXd& node_features() const { return node_feats_; }
  const Eigen::MatrixXd& edge_features() const { return edge_feats_; }
  bool has_labels() const { return !labels_.empty(); }
  int label(std::int64_t idx) const {
    return labels_.empty() ? 0 : labels_[static_cast<std::size_t>(idx)];
  }

  InteractionHistory& history() { return history_; }
  const InteractionHistory& history() const { return history_; }

  std::size_t max_degree() const {
    std::size_t d = 0;
    for (const auto& l : adj_) d = std::max(d, l.size());
    return d;
  }

  void save_cache(const std::string& path) const;
  static EventStore load_cache(const std::string& path);

 private:
  void build_adjacency() {
    adj_.assign(static_cast<std::size_t>(num_nodes_), {});
    std::vector<std::size_t> degree(static_cast<std::size_t>(num_nodes_), 0);
    for (const Event& e : events_) {
      ++degree[static_cast<std::size_t>(e.src)];
      if (e.dst != e.src) ++degree[static_cast<std::size_t>(e.dst)];
    }
    for (std::size_t u = 0; u < adj_.size(); ++u) adj_[u].reserve(degree[u]);
    // events are sorted, so per-node lists come out sorted as well
    for (const Event& e : events_) {
      adj_[static_cast<std::size_t>(e.src)].push_back({e.dst, e.ts, e.idx});
      if (e.dst != e.src)
        adj_[static_cast<std::size_t>(e.dst)].push_back({e.src, e.ts, e.idx});
    }
  }

  std::vector<Event> events_;
  std::vector<std::vector<NeighborEntry>> adj_;
  Eigen::MatrixXd node_feats_;
  Eigen::MatrixXd edge_feats_;
  std::vector<int> labels_;
  NodeId num_nodes_ = 0;
  double t_max_ = 0.0;
  InteractionHistory history_;
};

// --- JODIE CSV ingestion ---------------------------------------------------
// Layout: header, then `src,dst,ts,state_label[,f1,...,f_de]` per row.
// With `bipartite`, dst ids live in their own space and are offset past the
// largest src id.

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline EventStore load_jodie_csv(const std::string& path, bool bipartite) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path);

  std::string line;
  if (!std::getline(in, line)) throw DataError("empty dataset: " + path);
  const auto header = detail::split_csv_line(line);
  static const char* required[] = {"src", "dst", "ts", "state_label"};
  if (header.size() < 4)
    throw DataError("dataset " + path + ": missing column '" +
                    required[header.size()] + "' (JODIE layout needs " +
                    "src,dst,ts,state_label[,features...])");
  const Eigen::Index d_e = static_cast<Eigen::Index>(header.size()) - 4;

  IngestData data;
  std::vector<double> feat_buf;
  std::int64_t row = 0;
  NodeId max_src = -1, max_dst = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (static_cast<Eigen::Index>(f.size()) != 4 + d_e)
      throw DataError("dataset " + path + ": row " + std::to_string(row + 2) +
                      " has " + std::to_string(f.size()) + " fields, expected " +
                      std::to_string(4 + d_e));
    try {
      Event e;
      e.src = static_cast<NodeId>(std::stol(f[0]));
      e.dst = static_cast<NodeId>(std::stol(f[1]));
      e.ts = std::stod(f[2]);
      data.events.push_back(e);
      data.labels.push_back(static_cast<int>(std::stod(f[3])));
      for (Eigen::Index j = 0; j < d_e; ++j)
        feat_buf.push_back(std::stod(f[static_cast<std::size_t>(4 + j)]));
    } catch (const std::exception&) {
      throw DataError("dataset " + path + ": unparsable row " +
                      std::to_string(row + 2));
    }
    max_src = std::max(max_src, data.events.back().src);
    max_dst = std::max(max_dst, data.events.back().dst);
    ++row;
  }
  if (data.events.empty()) throw DataError("dataset " + path + ": no events");

  if (bipartite) {
    const NodeId offset = max_src + 1;
    for (Event& e : data.events) e.dst += offset;
    max_dst += offset;
  }
  if (d_e > 0) {
    data.edge_feats.resize(row, d_e);
    for (std::int64_t i = 0; i < row; ++i)
      for (Eigen::Index j = 0; j < d_e; ++j)
        data.edge_feats(i, j) = feat_buf[static_cast<std::size_t>(i * d_e + j)];
  }
  const NodeId num_nodes = std::max(max_src, max_dst) + 1;
  return EventStore::ingest(std::move(data), num_nodes);
}

// --- Binary cache ------------------------------------------------------------
// Self-describing snapshot of the sorted store: magic, version, N, M, d_e,
// d_n, then flat little-endian arrays. Adjacency is rebuilt on load.

namespace detail {

template <class T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("cache: truncated file");
}

}  // namespace detail

inline void EventStore::save_cache(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write cache: " + path);
  const char magic[8] = {'C', 'D', 'G', 'T', 'S', 'T', 'R', '1'};
  out.write(magic, 8);
  detail::write_pod(out, static_cast<std::int64_t>(num_nodes_));
  detail::write_pod(out, num_events());
  detail::write_pod(out, static_cast<std::int64_t>(edge_feats_.cols()));
  detail::write_pod(out, static_cast<std::int64_t>(node_feats_.cols()));
  detail::write_pod(out, static_cast<std::int64_t>(labels_.size()));
  for (const Event& e : events_) {
    detail::write_pod(out, e.src);
    detail::write_pod(out, e.dst);
    detail::write_pod(out, e.ts);
  }
  for (const int l : labels_) detail::write_pod(out, l);
  if (edge_feats_.size() > 0)
    out.write(reinterpret_cast<const char*>(edge_feats_.data()),
              static_cast<std::streamsize>(sizeof(double) *
                                           static_cast<std::size_t>(
                                               edge_feats_.size())));
  if (node_feats_.size() > 0)
    out.write(reinterpret_cast<const char*>(node_feats_.data()),
              static_cast<std::streamsize>(sizeof(double) *
                                           static_cast<std::size_t>(
                                               node_feats_.size())));
  if (!out) throw DataError("cache write failed: " + path);
}

inline EventStore EventStore::load_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open cache: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "CDGTSTR1", 8) != 0)
    throw DataError("cache: bad magic in " + path);
  std::int64_t n = 0, m = 0, d_e = 0, d_n = 0, n_labels = 0;
  detail::read_pod(in, n);
  detail::read_pod(in, m);
  detail::read_pod(in, d_e);
  detail::read_pod(in, d_n);
  detail::read_pod(in, n_labels);
  IngestData data;
  data.events.resize(static_cast<std::size_t>(m));
  for (Event& e : data.events) {
    detail::read_pod(in, e.src);
    detail::read_pod(in, e.dst);
    detail::read_pod(in, e.ts);
  }
  data.labels.resize(static_cast<std::size_t>(n_labels));
  for (int& l : data.labels) detail::read_pod(in, l);
  if (d_e > 0) {
    data.edge_feats.resize(m, d_e);
    in.read(reinterpret_cast<char*>(data.edge_feats.data()),
            static_cast<std::streamsize>(sizeof(double) *
                                         static_cast<std::size_t>(m * d_e)));
  }
  if (d_n > 0) {
    data.node_feats.resize(n, d_n);
    in.read(reinterpret_cast<char*>(data.node_feats.data()),
            static_cast<std::streamsize>(sizeof(double) *
                                         static_cast<std::size_t>(n * d_n)));
  }
  if (!in) throw DataError("cache: truncated file " + path);
  return ingest(std::move(data), static_cast<NodeId>(n));
}

}  // namespace cordgt
