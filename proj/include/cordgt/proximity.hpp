#pragma once

#include <cmath>
#include <optional>

#include "cordgt/core.hpp"
#include "cordgt/event_store.hpp"
#include "cordgt/sampler.hpp"

namespace cordgt {

/// Weights and sentinels of the Temporal/Spatial Distance computation.
/// Finite TD is bounded by alpha + beta, so the "no prior interaction"
/// sentinel is max(td_max, alpha + beta) to stay separable from every finite
/// value. sd_inf is one beyond the largest reachable hop in a pair of K-hop
/// contextual sets.
struct TdParams {
  double alpha = 1.0;
  double beta = 10.0;
  double td_max = 10.0;
  int sd_inf = 5;  // 2K + 1 with the default K = 2

  double td_sentinel() const { return std::max(td_max, alpha + beta); }

  static TdParams for_hops(int hops, double alpha = 1.0, double beta = 10.0,
                           double td_max = 10.0) {
    TdParams p;
    p.alpha = alpha;
    p.beta = beta;
    p.td_max = td_max;
    p.sd_inf = 2 * hops + 1;
    return p;
  }
};

/// Maximum-likelihood intensity of a Poisson point process observed as n
/// events with the latest at t_n: lambda = n / t_n.
inline double poisson_mle(std::int64_t n, double t_n) {
  if (n < 1) throw NumericError("poisson_mle: need at least one event");
  if (!(t_n > 0.0)) throw NumericError("poisson_mle: t_n must be positive");
  return static_cast<double>(n) / t_n;
}

/// Temporal Distance of a pair at t_pred:
///   alpha * t_n / (t_pred * n) + beta * (t_pred - t_n) / t_pred
/// with 0 for the node itself and the td sentinel when the pair never
/// interacted. A record from the future (t_n > t_pred) indicates the ledger
/// saw the in-flight batch and is rejected. t_n == t_pred can legitimately
/// arise from equal timestamps across a batch boundary and is accepted.
inline double temporal_distance(const std::optional<PairRecord>& record,
                                bool same_node, double t_pred,
                                const TdParams& params) {
  if (same_node) return 0.0;
  if (!record.has_value()) return params.td_sentinel();
  if (record->last_ts > t_pred)
    throw NumericError("temporal_distance: history contains the future (t_n=" +
                       std::to_string(record->last_ts) + " > t_pred=" +
                       std::to_string(t_pred) + ")");
  if (!(t_pred > 0.0))
    throw NumericError("temporal_distance: t_pred must be positive");
  const double n = static_cast<double>(record->count);
  return params.alpha * record->last_ts / (t_pred * n) +
         params.beta * (t_pred - record->last_ts) / t_pred;
}

/// Spatial Distance: minimum hop of `w` among the non-padding tokens of the
/// sampled contextual set (0 for the root), or sd_inf when absent.
inline int spatial_distance(const ContextualSet& ctx, NodeId w,
                            const TdParams& params) {
  int best = params.sd_inf;
  for (const ContextualToken& t : ctx.tokens)
    if (!t.pad && t.node == w && t.hop < best) best = t.hop;
  return best;
}

}  // namespace cordgt
