#pragma once

#include <json.hpp>
#include <span>
#include <unordered_map>
#include <vector>

#include "cordgt/core.hpp"
#include "cordgt/event_store.hpp"

namespace cordgt {

enum class SamplingStrategy { kUniform, kRecent };

/// One entry of a sampled contextual set. `ts` is the interaction time the
/// token was reached through (t_pred for the root); `event_idx` points at the
/// connecting interaction in the store (-1 for root and padding).
struct ContextualToken {
  NodeId node = -1;
  double ts = 0.0;
  int hop = 0;
  int parent = 0;  // token index; self for root
  std::int64_t event_idx = -1;
  bool pad = false;
};

/// Fixed-shape sampled tree rooted at (root, t_pred). Layout is layer-major,
/// parent-major: token 0 is the root, then n_1 children of the root, then n_2
/// children of each level-1 token in order, and so on. Parents with no prior
/// neighbors get padding children.
struct ContextualSet {
  NodeId root = -1;
  double t_pred = 0.0;
  std::vector<int> fanouts;
  std::vector<ContextualToken> tokens;

  int size() const { return static_cast<int>(tokens.size()); }

  static int size_for(std::span<const int> fanouts) {
    int total = 1, layer = 1;
    for (const int f : fanouts) {
      layer *= f;
      total += layer;
    }
    return total;
  }

  /// Minimum hop per node over non-padding tokens (the root contributes 0).
  std::unordered_map<NodeId, int> min_hops() const {
    std::unordered_map<NodeId, int> hops;
    for (const ContextualToken& t : tokens) {
      if (t.pad) continue;
      const auto it = hops.find(t.node);
      if (it == hops.end() || t.hop < it->second) hops[t.node] = t.hop;
    }
    return hops;
  }
};

/// Iterative temporal-neighbor expansion. Level k draws n_k children per
/// level-(k-1) token: uniform with replacement from neighbors_before(node, ts)
/// or, for kRecent, the n_k most recent entries (newest first). The time bound
/// for children is the parent token's own ts, not t_pred.
inline ContextualSet sample_contextual(const EventStore& store, NodeId w0,
                                       double t_pred,
                                       std::span<const int> fanouts,
                                       SamplingStrategy strategy,
                                       std::uint64_t seed) {
  for (const int f : fanouts)
    if (f < 1) throw ConfigError("sample_contextual: fanouts must be >= 1");

  ContextualSet set;
  set.root = w0;
  set.t_pred = t_pred;
  set.fanouts.assign(fanouts.begin(), fanouts.end());
  set.tokens.reserve(static_cast<std::size_t>(ContextualSet::size_for(fanouts)));
  set.tokens.push_back({w0, t_pred, 0, 0, -1, false});

  Rng rng(mix_seed(seed, 0x5a3f));
  int level_begin = 0, level_end = 1;
  for (std::size_t k = 0; k < fanouts.size(); ++k) {
    const int n_k = fanouts[k];
    for (int p = level_begin; p < level_end; ++p) {
      const ContextualToken parent = set.tokens[static_cast<std::size_t>(p)];
      std::span<const NeighborEntry> cands;
      if (!parent.pad) cands = store.neighbors_before(parent.node, parent.ts);
      for (int c = 0; c < n_k; ++c) {
        ContextualToken child;
        child.hop = static_cast<int>(k) + 1;
        child.parent = p;
        if (cands.empty()) {
          child.pad = true;
        } else if (strategy == SamplingStrategy::kUniform) {
          const auto& pick = cands[rng.below(cands.size())];
          child = {pick.node, pick.ts, child.hop, p, pick.event_idx, false};
        } else {  // most recent first
          if (static_cast<std::size_t>(c) < cands.size()) {
            const auto& pick = cands[cands.size() - 1 - static_cast<std::size_t>(c)];
            child = {pick.node, pick.ts, child.hop, p, pick.event_idx, false};
          } else {
            child.pad = true;
          }
        }
        set.tokens.push_back(child);
      }
    }
    level_begin = level_end;
    level_end = static_cast<int>(set.tokens.size());
  }
  return set;
}

inline nlohmann::json to_json(const ContextualSet& set) {
  nlohmann::json j;
  j["root"] = set.root;
  j["t_pred"] = set.t_pred;
  j["fanouts"] = set.fanouts;
  auto& tokens = j["tokens"] = nlohmann::json::array();
  for (const ContextualToken& t : set.tokens) {
    tokens.push_back({{"node", t.node},
                      {"ts", t.ts},
                      {"hop", t.hop},
                      {"parent", t.parent},
                      {"event", t.event_idx},
                      {"pad", t.pad}});
  }
  return j;
}

}  // namespace cordgt
