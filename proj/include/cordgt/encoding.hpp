#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "cordgt/core.hpp"
#include "cordgt/proximity.hpp"
#include "cordgt/tensor.hpp"

namespace cordgt {

/// Sinusoidal scalar encoder configuration. The code has length 2d:
///   out[2i]   = sin(eps * x / 10000^(2i/d))
///   out[2i+1] = cos(eps * x / 10000^(2i/d))
/// eps amplifies the influence of x across positions. d_td / d_sd are the
/// output widths of the two projection networks.
struct EncConfig {
  int d = 50;
  double epsilon = 10000.0;
  int d_td = 100;
  int d_sd = 100;

  int code_len() const { return 2 * d; }
};

namespace detail {

// eps / 10000^(2i/d) for i = 0..d-1
inline Eigen::VectorXd enc_frequencies(const EncConfig& cfg) {
  Eigen::VectorXd freq(cfg.d);
  for (int i = 0; i < cfg.d; ++i)
    freq[i] = cfg.epsilon / std::pow(10000.0, (2.0 * i) / cfg.d);
  return freq;
}

}  // namespace detail

inline Eigen::VectorXd enc(double x, const EncConfig& cfg) {
  if (!std::isfinite(x)) throw NumericError("enc: non-finite input");
  const Eigen::VectorXd freq = detail::enc_frequencies(cfg);
  Eigen::VectorXd out(cfg.code_len());
  for (int i = 0; i < cfg.d; ++i) {
    const double angle = freq[i] * x;
    out[2 * i] = std::sin(angle);
    out[2 * i + 1] = std::cos(angle);
  }
  return out;
}

/// One code per input, stacked as rows (n x 2d). Always evaluated in double;
/// callers cast to the model scalar.
inline Eigen::MatrixXd enc_rows(const std::vector<double>& xs,
                                const EncConfig& cfg) {
  const Eigen::Index n = static_cast<Eigen::Index>(xs.size());
  const Eigen::VectorXd freq = detail::enc_frequencies(cfg);
  Eigen::Map<const Eigen::VectorXd> x(xs.data(), n);
  for (Eigen::Index r = 0; r < n; ++r)
    if (!std::isfinite(xs[static_cast<std::size_t>(r)]))
      throw NumericError("enc: non-finite input");
  const Eigen::MatrixXd angles = x * freq.transpose();  // n x d
  Eigen::MatrixXd out(n, cfg.code_len());
  for (int i = 0; i < cfg.d; ++i) {
    out.col(2 * i) = angles.col(i).array().sin();
    out.col(2 * i + 1) = angles.col(i).array().cos();
  }
  return out;
}

// --- Two-layer projection networks ------------------------------------------

struct MlpIdx {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

template <class S>
MlpIdx add_mlp(ParamSet<S>& p, const std::string& prefix, Eigen::Index in,
               Eigen::Index hidden, Eigen::Index out) {
  MlpIdx m;
  m.w1 = p.add(prefix + ".w1", in, hidden, Init::kXavier);
  m.b1 = p.add(prefix + ".b1", 1, hidden, Init::kZeros);
  m.w2 = p.add(prefix + ".w2", hidden, out, Init::kXavier);
  m.b2 = p.add(prefix + ".b2", 1, out, Init::kZeros);
  return m;
}

// Two affine layers with one ReLU between, applied row-wise.
template <class S>
Var mlp2(Tape<S>& t, Var x, const ParamSet<S>& p, const MlpIdx& m) {
  Var h = relu(t, add_rowvec(t, matmul(t, x, t.param(m.w1, p.value(m.w1))),
                             t.param(m.b1, p.value(m.b1))));
  return add_rowvec(t, matmul(t, h, t.param(m.w2, p.value(m.w2))),
                    t.param(m.b2, p.value(m.b2)));
}

/// The two projection networks of the positional encoding: TD and SD each
/// get their own MLP (2d -> 2d -> d_td / d_sd).
struct StpeParams {
  MlpIdx td_proj, sd_proj;
};

template <class S>
StpeParams add_stpe_params(ParamSet<S>& p, const EncConfig& cfg) {
  StpeParams sp;
  sp.td_proj =
      add_mlp(p, "stpe.td", cfg.code_len(), cfg.code_len(), cfg.d_td);
  sp.sd_proj =
      add_mlp(p, "stpe.sd", cfg.code_len(), cfg.code_len(), cfg.d_sd);
  return sp;
}

/// Row-batched STPE-U: MLP(Enc(TD)) || MLP(Enc(SD)) per row. `use_td` /
/// `use_sd` realize the distance-removal ablations; at least one must hold.
template <class S>
Var stpe_u_rows(Tape<S>& t, const ParamSet<S>& p, const StpeParams& sp,
                const EncConfig& cfg, const std::vector<double>& td,
                const std::vector<double>& sd, bool use_td = true,
                bool use_sd = true) {
  detail::require(use_td || use_sd, "stpe_u: both distance channels disabled");
  Var a, b;
  if (use_td)
    a = mlp2(t, t.constant(cast_mat<S>(enc_rows(td, cfg))), p, sp.td_proj);
  if (use_sd)
    b = mlp2(t, t.constant(cast_mat<S>(enc_rows(sd, cfg))), p, sp.sd_proj);
  if (use_td && use_sd) return concat_cols(t, a, b);
  return use_td ? a : b;
}

template <class S>
Var stpe_u(Tape<S>& t, double td, double sd, const ParamSet<S>& p,
           const StpeParams& sp, const EncConfig& cfg) {
  return stpe_u_rows(t, p, sp, cfg, {td}, {sd});
}

/// STPE-C of one token with respect to the target pair: the sum of its
/// STPE-U toward u and toward v. TD comes from the pair ledger, SD from each
/// target's own contextual set.
template <class S>
Var stpe_c(Tape<S>& t, const ContextualToken& token,
           const ContextualSet& target_u_ctx, const ContextualSet& target_v_ctx,
           const InteractionHistory& history, const ParamSet<S>& p,
           const StpeParams& sp, const EncConfig& cfg, const TdParams& td) {
  const double t_pred = target_u_ctx.t_pred;
  const auto resolve = [&](const ContextualSet& ctx) {
    const NodeId w0 = ctx.root;
    const double tdv =
        token.pad ? td.td_sentinel()
                  : temporal_distance(history.lookup(token.node, w0),
                                      token.node == w0, t_pred, td);
    const double sdv = token.pad ? static_cast<double>(td.sd_inf)
                                 : spatial_distance(ctx, token.node, td);
    return std::pair<double, double>(tdv, sdv);
  };
  const auto [td_u, sd_u] = resolve(target_u_ctx);
  const auto [td_v, sd_v] = resolve(target_v_ctx);
  Var a = stpe_u_rows(t, p, sp, cfg, {td_u}, {sd_u});
  Var b = stpe_u_rows(t, p, sp, cfg, {td_v}, {sd_v});
  return add(t, a, b);
}

}  // namespace cordgt
