#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cordgt/encoding.hpp"

namespace cordgt {

/// Variant toggles. no_td/no_sd drop a distance channel from the positional
/// encoding, stpe_u_only replaces the pair encoding with the single-target
/// one, no_mask lifts the temporal/hop attention constraints (padding stays
/// masked), alpha_zero/beta_zero zero one TD term, recent_sampling swaps the
/// neighbor sampling strategy.
struct AblationFlags {
  bool no_td = false;
  bool no_sd = false;
  bool stpe_u_only = false;
  bool no_mask = false;
  bool alpha_zero = false;
  bool beta_zero = false;
  bool recent_sampling = false;

  void validate() const {
    if (no_td && no_sd)
      throw ConfigError("ablation: cannot remove both distance channels");
    if (no_td && (alpha_zero || beta_zero))
      throw ConfigError(
          "ablation: no_td conflicts with alpha_zero/beta_zero");
  }
};

enum class ScoreHead { kMlp, kLinearDecomp };

struct ModelConfig {
  int layers = 2;
  int heads = 6;
  int hidden = 64;
  Eigen::Index d_e = 0;
  Eigen::Index d_n = 0;
  EncConfig enc;
  bool joint_encoding = true;
  ScoreHead score_head = ScoreHead::kMlp;
  AblationFlags flags;

  int stpe_width() const {
    return (flags.no_td ? 0 : enc.d_td) + (flags.no_sd ? 0 : enc.d_sd);
  }
  Eigen::Index input_width() const { return d_n + stpe_width(); }

  void validate() const {
    if (layers < 1 || heads < 1 || hidden < 1)
      throw ConfigError("model: layers/heads/hidden must be positive");
    flags.validate();
    if (input_width() <= 0) throw ConfigError("model: empty input width");
  }
};

inline TdParams effective_td(const TdParams& td, const AblationFlags& f) {
  TdParams out = td;
  if (f.alpha_zero) out.alpha = 0.0;
  if (f.beta_zero) out.beta = 0.0;
  return out;
}

// --- Attention mask ----------------------------------------------------------

/// allow(q, k) = 1 iff key k is non-padding, strictly earlier than query q,
/// and at greater-or-equal hop — messages flow from the history toward the
/// future and from farther temporal neighbors to closer ones. Rows left with
/// no allowed key fall back to self-attention and are listed in
/// fallback_rows.
struct AttentionMask {
  ByteMatrix allow;
  std::vector<int> fallback_rows;
};

inline AttentionMask build_mask(std::span<const ContextualToken> tokens,
                                bool no_mask = false) {
  const int n = static_cast<int>(tokens.size());
  AttentionMask m;
  m.allow = ByteMatrix::Zero(n, n);
  for (int q = 0; q < n; ++q) {
    bool any = false;
    for (int k = 0; k < n; ++k) {
      if (tokens[static_cast<std::size_t>(k)].pad) continue;
      const bool ok =
          no_mask || (tokens[static_cast<std::size_t>(k)].ts <
                          tokens[static_cast<std::size_t>(q)].ts &&
                      tokens[static_cast<std::size_t>(k)].hop >=
                          tokens[static_cast<std::size_t>(q)].hop);
      if (ok) {
        m.allow(q, k) = 1;
        any = true;
      }
    }
    if (!any) {
      m.allow(q, q) = 1;
      m.fallback_rows.push_back(q);
    }
  }
  return m;
}

// --- Token assembly ----------------------------------------------------------

struct TokenMeta {
  double td_u = 0.0, td_v = 0.0;
  int sd_u = 0, sd_v = 0;
  bool pad = false;
  int own = 0;  // 0: belongs to u's set, 1: to v's set
};

/// Everything the encoder consumes for one link: the (joint) token list,
/// per-token distances toward both targets, gathered node features, the
/// attention mask, sparse event-feature pairs, and the pooling masks.
/// Padding tokens carry sentinel distances and are excluded from pooling.
struct JointAssembly {
  std::vector<ContextualToken> tokens;
  std::vector<TokenMeta> meta;
  Eigen::MatrixXd node_features;  // T x d_n
  AttentionMask mask;
  EdgePairs edge_pairs;
  Eigen::MatrixXd edge_feats;  // one row per pair item
  std::vector<std::uint8_t> keep_u, keep_v;
  double t_pred = 0.0;
  NodeId u = -1, v = -1;
  bool single_target = false;
};

namespace detail {

struct HopIndex {
  NodeId root;
  std::unordered_map<NodeId, int> hops;

  explicit HopIndex(const ContextualSet& set)
      : root(set.root), hops(set.min_hops()) {}

  int sd(NodeId w, const TdParams& td) const {
    const auto it = hops.find(w);
    return it == hops.end() ? td.sd_inf : it->second;
  }
};

inline TokenMeta token_meta(const ContextualToken& tok, double t_pred,
                            const InteractionHistory& hist, const HopIndex& hu,
                            const HopIndex* hv, const TdParams& td, int own) {
  TokenMeta m;
  m.pad = tok.pad;
  m.own = own;
  if (tok.pad) {
    m.td_u = m.td_v = td.td_sentinel();
    m.sd_u = m.sd_v = td.sd_inf;
    return m;
  }
  m.td_u = temporal_distance(hist.lookup(tok.node, hu.root),
                             tok.node == hu.root, t_pred, td);
  m.sd_u = hu.sd(tok.node, td);
  if (hv) {
    m.td_v = temporal_distance(hist.lookup(tok.node, hv->root),
                               tok.node == hv->root, t_pred, td);
    m.sd_v = hv->sd(tok.node, td);
  }
  return m;
}

inline void gather_tokens(JointAssembly& out, const EventStore& store,
                          const ContextualSet& set, int own,
                          const HopIndex& hu, const HopIndex* hv,
                          const TdParams& td) {
  const int offset = static_cast<int>(out.tokens.size());
  const Eigen::Index d_n = store.node_dim();
  const Eigen::Index d_e = store.edge_dim();
  for (const ContextualToken& tok : set.tokens) {
    ContextualToken shifted = tok;
    shifted.parent += offset;
    out.tokens.push_back(shifted);
    out.meta.push_back(token_meta(tok, set.t_pred, store.history(), hu, hv,
                                  td, own));
    const std::uint8_t kept = tok.pad ? 0 : 1;
    out.keep_u.push_back(own == 0 ? kept : 0);
    out.keep_v.push_back(own == 1 ? kept : 0);
  }
  if (d_n > 0) {
    const Eigen::Index first = out.node_features.rows();
    out.node_features.conservativeResize(
        first + static_cast<Eigen::Index>(set.tokens.size()), d_n);
    for (std::size_t i = 0; i < set.tokens.size(); ++i) {
      const ContextualToken& tok = set.tokens[i];
      const Eigen::Index row = first + static_cast<Eigen::Index>(i);
      if (tok.pad)
        out.node_features.row(row).setZero();
      else
        out.node_features.row(row) = store.node_features().row(tok.node);
    }
  }
  if (d_e > 0) {
    Eigen::Index connected = 0;
    for (const ContextualToken& tok : set.tokens)
      if (!tok.pad && tok.event_idx >= 0) ++connected;
    const Eigen::Index first_row = out.edge_feats.rows();
    out.edge_feats.conservativeResize(first_row + 2 * connected, d_e);
    Eigen::Index row = first_row;
    for (std::size_t i = 0; i < set.tokens.size(); ++i) {
      const ContextualToken& tok = set.tokens[i];
      if (tok.pad || tok.event_idx < 0) continue;
      const int child = offset + static_cast<int>(i);
      const int parent = tok.parent + offset;
      out.edge_feats.row(row) = store.edge_features().row(tok.event_idx);
      out.edge_feats.row(row + 1) = store.edge_features().row(tok.event_idx);
      out.edge_pairs.items.push_back({child, parent, static_cast<int>(row)});
      out.edge_pairs.items.push_back(
          {parent, child, static_cast<int>(row + 1)});
      row += 2;
    }
  }
}

}  // namespace detail

/// Joint assembly over C(u) then C(v); mask and event features are built on
/// the combined token list, pooling masks stay per target.
inline JointAssembly assemble_joint(const EventStore& store,
                                    const ContextualSet& ctx_u,
                                    const ContextualSet& ctx_v,
                                    const TdParams& td, bool no_mask) {
  JointAssembly out;
  out.t_pred = ctx_u.t_pred;
  out.u = ctx_u.root;
  out.v = ctx_v.root;
  out.node_features.resize(0, store.node_dim());
  out.edge_feats.resize(0, store.edge_dim());
  const detail::HopIndex hu(ctx_u);
  const detail::HopIndex hv(ctx_v);
  detail::gather_tokens(out, store, ctx_u, 0, hu, &hv, td);
  detail::gather_tokens(out, store, ctx_v, 1, hu, &hv, td);
  out.mask = build_mask(out.tokens, no_mask);
  return out;
}

/// One target's tokens only, with distances still taken toward both targets
/// (the separate-encoding variant).
inline JointAssembly assemble_half(const EventStore& store,
                                   const ContextualSet& ctx_own, bool own_is_u,
                                   const ContextualSet& ctx_u,
                                   const ContextualSet& ctx_v,
                                   const TdParams& td, bool no_mask) {
  JointAssembly out;
  out.t_pred = ctx_own.t_pred;
  out.u = ctx_u.root;
  out.v = ctx_v.root;
  out.node_features.resize(0, store.node_dim());
  out.edge_feats.resize(0, store.edge_dim());
  const detail::HopIndex hu(ctx_u);
  const detail::HopIndex hv(ctx_v);
  detail::gather_tokens(out, store, ctx_own, own_is_u ? 0 : 1, hu, &hv, td);
  out.mask = build_mask(out.tokens, no_mask);
  return out;
}

/// Single-root assembly for node-level tasks; positional encodings are
/// unitary toward the root.
inline JointAssembly assemble_single(const EventStore& store,
                                     const ContextualSet& ctx,
                                     const TdParams& td, bool no_mask) {
  JointAssembly out;
  out.t_pred = ctx.t_pred;
  out.u = ctx.root;
  out.single_target = true;
  out.node_features.resize(0, store.node_dim());
  out.edge_feats.resize(0, store.edge_dim());
  const detail::HopIndex hu(ctx);
  detail::gather_tokens(out, store, ctx, 0, hu, nullptr, td);
  out.mask = build_mask(out.tokens, no_mask);
  return out;
}

// --- Parameter bundle ---------------------------------------------------------

struct HeadIdx {
  int wq = -1, wk = -1, wv = -1, wek = -1, wev = -1;
};

struct LayerIdx {
  int ln1_g = -1, ln1_b = -1, ln2_g = -1, ln2_b = -1;
  std::vector<HeadIdx> heads;
  int wo = -1, bo = -1;
  MlpIdx ffn;
};

struct CordgtParams {
  StpeParams stpe;
  int in_w = -1, in_b = -1;
  std::vector<LayerIdx> layers;
  MlpIdx score_mlp;
  int phi = -1;
};

/// Registers every weight of the encoder plus the selected score head.
/// Per-head key/value width equals the hidden dimension (d_K = d_V = d);
/// head outputs are concatenated and projected back to d.
template <class S>
CordgtParams build_params(ParamSet<S>& p, const ModelConfig& cfg) {
  cfg.validate();
  CordgtParams m;
  m.stpe = add_stpe_params(p, cfg.enc);
  const Eigen::Index d = cfg.hidden;
  m.in_w = p.add("input.w", cfg.input_width(), d, Init::kXavier);
  m.in_b = p.add("input.b", 1, d, Init::kZeros);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layer." + std::to_string(l);
    LayerIdx layer;
    layer.ln1_g = p.add(pre + ".ln1.g", 1, d, Init::kOnes);
    layer.ln1_b = p.add(pre + ".ln1.b", 1, d, Init::kZeros);
    for (int h = 0; h < cfg.heads; ++h) {
      const std::string hp = pre + ".head." + std::to_string(h);
      HeadIdx head;
      head.wq = p.add(hp + ".wq", d, d, Init::kXavier);
      head.wk = p.add(hp + ".wk", d, d, Init::kXavier);
      head.wv = p.add(hp + ".wv", d, d, Init::kXavier);
      if (cfg.d_e > 0) {
        head.wek = p.add(hp + ".wek", cfg.d_e, d, Init::kXavier);
        head.wev = p.add(hp + ".wev", cfg.d_e, d, Init::kXavier);
      }
      layer.heads.push_back(head);
    }
    layer.wo = p.add(pre + ".wo", static_cast<Eigen::Index>(cfg.heads) * d, d,
                     Init::kXavier);
    layer.bo = p.add(pre + ".bo", 1, d, Init::kZeros);
    layer.ffn = add_mlp(p, pre + ".ffn", d, 4 * d, d);
    layer.ln2_g = p.add(pre + ".ln2.g", 1, d, Init::kOnes);
    layer.ln2_b = p.add(pre + ".ln2.b", 1, d, Init::kZeros);
    m.layers.push_back(layer);
  }
  if (cfg.score_head == ScoreHead::kMlp)
    m.score_mlp = add_mlp(p, "score", 2 * d, d, 1);
  else
    m.phi = p.add("score.phi", d, 1, Init::kXavier);
  return m;
}

// --- Encoder ------------------------------------------------------------------

/// Masked edge-aware self-attention:
///   A_qk = Q_q (K_k + e_qk W_EK)^T / sqrt(d);  out_q = sum_k P_qk (V_k + e_qk W_EV)
/// with the mask applied additively before the row softmax, per-head outputs
/// concatenated and projected back to d. `edge_const` holds the gathered
/// event-feature rows on the tape (invalid when d_e == 0). Attention
/// probability matrices are appended to `attn_sink` when provided.
template <class S>
Var cordgt_attention(Tape<S>& t, Var h, const ParamSet<S>& p,
                     const LayerIdx& lp, const AttentionMask& mask,
                     const EdgePairs& pairs, Var edge_const,
                     std::vector<Var>* attn_sink = nullptr) {
  const Eigen::Index n = t.val(h).rows();
  const Eigen::Index d = p.value(lp.heads[0].wq).cols();
  const S inv_sqrt_d = S(1) / std::sqrt(static_cast<S>(d));
  const bool with_edges = edge_const.valid() && !pairs.items.empty();
  std::vector<Var> head_outs;
  head_outs.reserve(lp.heads.size());
  for (const HeadIdx& head : lp.heads) {
    Var q = matmul(t, h, t.param(head.wq, p.value(head.wq)));
    Var k = matmul(t, h, t.param(head.wk, p.value(head.wk)));
    Var v = matmul(t, h, t.param(head.wv, p.value(head.wv)));
    Var scores = matmul_nt(t, q, k);
    if (with_edges) {
      Var ek = matmul(t, edge_const, t.param(head.wek, p.value(head.wek)));
      scores = add(t, scores, edge_key_scores(t, q, ek, pairs, n));
    }
    Var masked = masked_fill(t, scale(t, scores, inv_sqrt_d), mask.allow);
    Var probs = row_softmax(t, masked);
    if (attn_sink) attn_sink->push_back(probs);
    Var out = matmul(t, probs, v);
    if (with_edges) {
      Var ev = matmul(t, edge_const, t.param(head.wev, p.value(head.wev)));
      out = add(t, out, edge_value_mix(t, probs, ev, pairs));
    }
    head_outs.push_back(out);
  }
  Var cat = head_outs.size() == 1 ? head_outs[0] : concat_cols(t, head_outs);
  return add_rowvec(t, matmul(t, cat, t.param(lp.wo, p.value(lp.wo))),
                    t.param(lp.bo, p.value(lp.bo)));
}

/// Pre-Norm block: H' = Attn(LN(H)) + H; H_out = FFN(LN(H')) + H'.
template <class S>
Var cordgt_layer(Tape<S>& t, Var h, const ParamSet<S>& p, const LayerIdx& lp,
                 const AttentionMask& mask, const EdgePairs& pairs,
                 Var edge_const, std::vector<Var>* attn_sink = nullptr) {
  Var a = layer_norm(t, h, t.param(lp.ln1_g, p.value(lp.ln1_g)),
                     t.param(lp.ln1_b, p.value(lp.ln1_b)));
  Var h1 = add(t, h, cordgt_attention(t, a, p, lp, mask, pairs, edge_const,
                                      attn_sink));
  Var b = layer_norm(t, h1, t.param(lp.ln2_g, p.value(lp.ln2_g)),
                     t.param(lp.ln2_b, p.value(lp.ln2_b)));
  return add(t, h1, mlp2(t, b, p, lp.ffn));
}

/// Root embedding: mean over the non-padding rows selected by `keep`.
template <class S>
Var pool_root(Tape<S>& t, Var h, const std::vector<std::uint8_t>& keep) {
  return mean_rows(t, h, keep);
}

/// Link probability. The MLP head scores the concatenated pair embedding;
/// the linear head scores phi^T (z_u + z_v), whose per-token decomposition
/// powers the contribution export.
template <class S>
Var score_pair(Tape<S>& t, Var z_u, Var z_v, const ParamSet<S>& p,
               const CordgtParams& m, ScoreHead head, Var* logit_out = nullptr) {
  Var logit;
  if (head == ScoreHead::kMlp) {
    logit = mlp2(t, concat_cols(t, z_u, z_v), p, m.score_mlp);
  } else {
    logit = matmul(t, add(t, z_u, z_v), t.param(m.phi, p.value(m.phi)));
  }
  if (logit_out) *logit_out = logit;
  return sigmoid(t, logit);
}

template <class S>
struct EncodedLink {
  Var h_final;
  Var z_u, z_v;
};

template <class S>
EncodedLink<S> encode_assembly(Tape<S>& t, const ParamSet<S>& p,
                               const CordgtParams& m, const ModelConfig& cfg,
                               const JointAssembly& assembly,
                               std::vector<Var>* attn_sink = nullptr) {
  const std::size_t n = assembly.tokens.size();
  const bool use_td = !cfg.flags.no_td;
  const bool use_sd = !cfg.flags.no_sd;

  Var stpe;
  if (assembly.single_target || cfg.flags.stpe_u_only) {
    std::vector<double> td_own(n), sd_own(n);
    for (std::size_t i = 0; i < n; ++i) {
      const TokenMeta& mm = assembly.meta[i];
      td_own[i] = mm.own == 0 ? mm.td_u : mm.td_v;
      sd_own[i] = static_cast<double>(mm.own == 0 ? mm.sd_u : mm.sd_v);
    }
    stpe = stpe_u_rows(t, p, m.stpe, cfg.enc, td_own, sd_own, use_td, use_sd);
  } else {
    std::vector<double> td_u(n), sd_u(n), td_v(n), sd_v(n);
    for (std::size_t i = 0; i < n; ++i) {
      const TokenMeta& mm = assembly.meta[i];
      td_u[i] = mm.td_u;
      sd_u[i] = static_cast<double>(mm.sd_u);
      td_v[i] = mm.td_v;
      sd_v[i] = static_cast<double>(mm.sd_v);
    }
    Var a = stpe_u_rows(t, p, m.stpe, cfg.enc, td_u, sd_u, use_td, use_sd);
    Var b = stpe_u_rows(t, p, m.stpe, cfg.enc, td_v, sd_v, use_td, use_sd);
    stpe = add(t, a, b);
  }

  Var x = stpe;
  if (cfg.d_n > 0)
    x = concat_cols(t, t.constant(cast_mat<S>(assembly.node_features)), stpe);

  Var h = add_rowvec(t, matmul(t, x, t.param(m.in_w, p.value(m.in_w))),
                     t.param(m.in_b, p.value(m.in_b)));

  Var edge_const;
  if (cfg.d_e > 0 && assembly.edge_feats.rows() > 0)
    edge_const = t.constant(cast_mat<S>(assembly.edge_feats));
  for (const LayerIdx& layer : m.layers)
    h = cordgt_layer(t, h, p, layer, assembly.mask, assembly.edge_pairs,
                     edge_const, attn_sink);

  EncodedLink<S> out;
  out.h_final = h;
  if (std::count(assembly.keep_u.begin(), assembly.keep_u.end(), 1) > 0)
    out.z_u = pool_root(t, h, assembly.keep_u);
  if (std::count(assembly.keep_v.begin(), assembly.keep_v.end(), 1) > 0)
    out.z_v = pool_root(t, h, assembly.keep_v);
  return out;
}

template <class S>
struct LinkForward {
  JointAssembly assembly;  // joint mode; in separate mode the u half
  EncodedLink<S> enc;
  Var score, logit;
};

/// Full per-link forward: assemble the contextual tokens of both targets,
/// encode, pool per target and score. In separate mode each target runs its
/// own encoder pass over its own tokens.
template <class S>
LinkForward<S> forward_link(Tape<S>& t, const ParamSet<S>& p,
                            const CordgtParams& m, const ModelConfig& cfg,
                            const TdParams& td_in, const EventStore& store,
                            const ContextualSet& ctx_u,
                            const ContextualSet& ctx_v,
                            std::vector<Var>* attn_sink = nullptr) {
  const TdParams td = effective_td(td_in, cfg.flags);
  LinkForward<S> fwd;
  if (cfg.joint_encoding) {
    fwd.assembly = assemble_joint(store, ctx_u, ctx_v, td, cfg.flags.no_mask);
    fwd.enc = encode_assembly(t, p, m, cfg, fwd.assembly, attn_sink);
    fwd.score = score_pair(t, fwd.enc.z_u, fwd.enc.z_v, p, m, cfg.score_head,
                           &fwd.logit);
  } else {
    fwd.assembly =
        assemble_half(store, ctx_u, true, ctx_u, ctx_v, td, cfg.flags.no_mask);
    JointAssembly half_v =
        assemble_half(store, ctx_v, false, ctx_u, ctx_v, td, cfg.flags.no_mask);
    EncodedLink<S> enc_u =
        encode_assembly(t, p, m, cfg, fwd.assembly, attn_sink);
    EncodedLink<S> enc_v = encode_assembly(t, p, m, cfg, half_v, attn_sink);
    fwd.enc.h_final = enc_u.h_final;
    fwd.enc.z_u = enc_u.z_u;
    fwd.enc.z_v = enc_v.z_v;
    fwd.score = score_pair(t, fwd.enc.z_u, fwd.enc.z_v, p, m, cfg.score_head,
                           &fwd.logit);
  }
  return fwd;
}

/// Single-root embedding under the unitary positional encoding (node-level
/// tasks run this with frozen weights).
template <class S>
Var forward_node_embedding(Tape<S>& t, const ParamSet<S>& p,
                           const CordgtParams& m, const ModelConfig& cfg,
                           const TdParams& td_in, const EventStore& store,
                           const ContextualSet& ctx) {
  const TdParams td = effective_td(td_in, cfg.flags);
  const JointAssembly assembly =
      assemble_single(store, ctx, td, cfg.flags.no_mask);
  return encode_assembly(t, p, m, cfg, assembly).z_u;
}

// --- Score decomposition -------------------------------------------------------

struct DecompRow {
  double td_u = 0.0, td_v = 0.0;
  int sd_u = 0, sd_v = 0;
  double contribution = 0.0;
};

/// Per-token contributions phi^T H(i,:) of a link scored with the linear
/// decomposition head, paired with each token's distances toward both
/// targets. Padding tokens are skipped.
template <class S>
std::vector<DecompRow> decompose_scores(const Tape<S>& t,
                                        const LinkForward<S>& fwd,
                                        const ParamSet<S>& p, int phi_index) {
  if (phi_index < 0)
    throw ConfigError("decompose_scores: decomposition head absent");
  const Mat<S>& h = t.val(fwd.enc.h_final);
  const Mat<S>& phi = p.value(phi_index);
  std::vector<DecompRow> rows;
  rows.reserve(fwd.assembly.tokens.size());
  for (std::size_t i = 0; i < fwd.assembly.tokens.size(); ++i) {
    const TokenMeta& mm = fwd.assembly.meta[i];
    if (mm.pad) continue;
    DecompRow r;
    r.td_u = mm.td_u;
    r.td_v = mm.td_v;
    r.sd_u = mm.sd_u;
    r.sd_v = mm.sd_v;
    r.contribution = static_cast<double>(
        h.row(static_cast<Eigen::Index>(i)).dot(phi.col(0)));
    rows.push_back(r);
  }
  return rows;
}

}  // namespace cordgt
