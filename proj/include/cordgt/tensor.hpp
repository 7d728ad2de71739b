#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "cordgt/core.hpp"

namespace cordgt {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ByteMatrix =
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
Mat<S> cast_mat(const Eigen::MatrixXd& m) {
  return m.cast<S>();
}

/// Dense value with an optional same-shape gradient; shape is (rows, cols)
/// and vectors are 1 x n rows.
template <class S>
struct Tensor {
  Mat<S> value;
  Mat<S> grad;  // empty until gradient flows
  bool requires_grad = false;
};

struct Var {
  std::int32_t i = -1;
  bool valid() const { return i >= 0; }
};

/// Sparse (query, key, feature-row) triplets. The conceptual C x C x d_e
/// event-feature array is nonzero only on tree-adjacent token pairs, so the
/// attention edge terms are evaluated on these entries alone.
struct EdgePairs {
  struct Item {
    int q, k, feat_row;
  };
  std::vector<Item> items;
};

/// Reverse-mode tape over one forward pass. Values are computed eagerly and
/// each differentiable op registers a backward closure. Parameter leaves
/// alias external storage (no copy) and report gradients through
/// for_each_param_grad after backward(). Nodes live in a deque, so
/// references returned by val() stay valid while further ops are recorded.
/// Tapes are independent across threads; parameters are updated by a single
/// owner between batches.
template <class S>
class Tape {
 public:
  explicit Tape(bool check_nan = std::is_same_v<S, double>)
      : check_nan_(check_nan) {}

  Var constant(Mat<S> v) {
    Node n;
    n.t.value = std::move(v);
    return push(std::move(n));
  }

  Var constant(const Eigen::MatrixXd& v)
    requires(!std::is_same_v<S, double>)
  {
    return constant(cast_mat<S>(v));
  }

  Var scalar(S v) {
    Mat<S> m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  /// Leaf bound to parameter `index`; the value stays in the caller's
  /// ParamSet and must remain alive and unchanged while the tape is in use.
  /// Repeated requests for the same index return the same leaf.
  Var param(int index, const Mat<S>& storage) {
    if (index < static_cast<int>(param_cache_.size()) &&
        param_cache_[static_cast<std::size_t>(index)].valid())
      return param_cache_[static_cast<std::size_t>(index)];
    Node n;
    n.external = &storage;
    n.t.requires_grad = true;
    n.param_index = index;
    const Var v = push(std::move(n));
    if (index >= static_cast<int>(param_cache_.size()))
      param_cache_.resize(static_cast<std::size_t>(index) + 1);
    param_cache_[static_cast<std::size_t>(index)] = v;
    return v;
  }

  const Mat<S>& val(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.i)];
    return n.external ? *n.external : n.t.value;
  }

  const Mat<S>& grad(Var v) const {
    return nodes_[static_cast<std::size_t>(v.i)].t.grad;
  }

  bool requires_grad(Var v) const {
    return nodes_[static_cast<std::size_t>(v.i)].t.requires_grad;
  }

  template <class Expr>
  void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[static_cast<std::size_t>(v.i)];
    if (!n.t.requires_grad) return;
    if (n.t.grad.size() == 0)
      n.t.grad = Mat<S>::Zero(val(v).rows(), val(v).cols());
    n.t.grad += g;
  }

  /// Reverse sweep from a 1x1 root. `seed` scales the whole gradient (e.g.
  /// 1/B when per-link losses are averaged over a batch).
  void backward(Var root, S seed = S(1)) {
    const Mat<S>& r = val(root);
    if (r.rows() != 1 || r.cols() != 1)
      throw NumericError("backward: root must be a 1x1 scalar");
    Mat<S> g(1, 1);
    g(0, 0) = seed;
    nodes_[static_cast<std::size_t>(root.i)].t.grad = std::move(g);
    for (std::int32_t i = root.i; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back && n.t.grad.size() != 0) n.back(*this);
    }
  }

  template <class Fn>
  void for_each_param_grad(Fn fn) const {
    for (const Node& n : nodes_)
      if (n.param_index >= 0 && n.t.grad.size() != 0)
        fn(n.param_index, n.t.grad);
  }

  int size() const { return static_cast<int>(nodes_.size()); }

  Var push_op(const char* op, Mat<S> value, bool requires_grad) {
    if (check_nan_ && !value.allFinite())
      throw NumericError(std::string("non-finite values produced by ") + op);
    Node n;
    n.t.value = std::move(value);
    n.t.requires_grad = requires_grad;
    return push(std::move(n));
  }

  void set_back(Var v, std::function<void(Tape&)> back) {
    nodes_[static_cast<std::size_t>(v.i)].back = std::move(back);
  }

 private:
  struct Node {
    Tensor<S> t;
    const Mat<S>* external = nullptr;
    std::function<void(Tape&)> back;
    int param_index = -1;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  std::deque<Node> nodes_;
  std::vector<Var> param_cache_;
  bool check_nan_;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw NumericError(what);
}

}  // namespace detail

// --- Core operator set -------------------------------------------------------
// Forward per the standard definition; backward accumulates into input grads.

template <class S>
Var matmul(Tape<S>& t, Var a, Var b) {
  const Mat<S>& A = t.val(a);
  const Mat<S>& B = t.val(b);
  detail::require(A.cols() == B.rows(), "matmul: inner dimensions differ");
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Var out = t.push_op("matmul", A * B, rg);
  if (rg)
    t.set_back(out, [out, a, b](Tape<S>& tp) {
      const Mat<S>& g = tp.grad(out);
      tp.accumulate(a, g * tp.val(b).transpose());
      tp.accumulate(b, tp.val(a).transpose() * g);
    });
  return out;
}

// A * B^T without materializing the transpose on the tape.
template <class S>
Var matmul_nt(Tape<S>& t, Var a, Var b) {
  const Mat<S>& A = t.val(a);
  const Mat<S>& B = t.val(b);
  detail::require(A.cols() == B.cols(), "matmul_nt: inner dimensions differ");
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Var out = t.push_op("matmul_nt", A * B.transpose(), rg);
  if (rg)
    t.set_back(out, [out, a, b](Tape<S>& tp) {
      const Mat<S>& g = tp.grad(out);
      tp.accumulate(a, g * tp.val(b));
      tp.accumulate(b, g.transpose() * tp.val(a));
    });
  return out;
}

template <class S>
Var add(Tape<S>& t, Var a, Var b) {
  const Mat<S>& A = t.val(a);
  const Mat<S>& B = t.val(b);
  detail::require(A.rows() == B.rows() && A.cols() == B.cols(),
                  "add: shape mismatch");
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Var out = t.push_op("add", A + B, rg);
  if (rg)
    t.set_back(out, [out, a, b](Tape<S>& tp) {
      tp.accumulate(a, tp.grad(out));
      tp.accumulate(b, tp.grad(out));
    });
  return out;
}

// Row-broadcast add: X (m x n) + b (1 x n).
template <class S>
Var add_rowvec(Tape<S>& t, Var a, Var b) {
  const Mat<S>& A = t.val(a);
  const Mat<S>& B = t.val(b);
  detail::require(B.rows() == 1 && A.cols() == B.cols(),
                  "add_rowvec: expected (m x n) + (1 x n)");
  Mat<S> out = A;
  out.rowwise() += B.row(0);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Var o = t.push_op("add_rowvec", std::move(out), rg);
  if (rg)
    t.set_back(o, [o, a, b](Tape<S>& tp) {
      const Mat<S>& g = tp.grad(o);
      tp.accumulate(a, g);
      tp.accumulate(b, g.colwise().sum());
    });
  return o;
}

template <class S>
Var scale(Tape<S>& t, Var a, S c) {
  const bool rg = t.requires_grad(a);
  Var out = t.push_op("scale", Mat<S>(t.val(a) * c), rg);
  if (rg)
    t.set_back(out, [out, a, c](Tape<S>& tp) {
      tp.accumulate(a, tp.grad(out) * c);
    });
  return out;
}

// Column-wise concatenation of equal-height blocks.
template <class S>
Var concat_cols(Tape<S>& t, const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat: no inputs");
  const Eigen::Index rows = t.val(parts[0]).rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (const Var p : parts) {
    detail::require(t.val(p).rows() == rows, "concat: row count mismatch");
    cols += t.val(p).cols();
    rg = rg || t.requires_grad(p);
  }
  Mat<S> out(rows, cols);
  Eigen::Index at = 0;
  for (const Var p : parts) {
    out.middleCols(at, t.val(p).cols()) = t.val(p);
    at += t.val(p).cols();
  }
  Var o = t.push_op("concat", std::move(out), rg);
  if (rg)
    t.set_back(o, [o, parts](Tape<S>& tp) {
      const Mat<S>& g = tp.grad(o);
      Eigen::Index at = 0;
      for (const Var p : parts) {
        const Eigen::Index w = tp.val(p).cols();
        tp.accumulate(p, g.middleCols(at, w));
        at += w;
      }
    });
  return o;
}

template <class S>
Var concat_cols(Tape<S>& t, Var a, Var b) {
  return concat_cols(t, std::vector<Var>{a, b});
}

template <class S>
Var slice_rows(Tape<S>& t, Var a, Eigen::Index first, Eigen::Index count) {
  const Mat<S>& A = t.val(a);
  detail::require(first >= 0 && first + count <= A.rows(),
                  "slice_rows: range out of bounds");
  const bool rg = t.requires_grad(a);
  Var out = t.push_op("slice_rows", A.middleRows(first, count), rg);
  if (rg)
    t.set_back(out, [out, a, first, count](Tape<S>& tp) {
      Mat<S> g = Mat<S>::Zero(tp.val(a).rows(), tp.val(a).cols());
      g.middleRows(first, count) = tp.grad(out);
      tp.accumulate(a, g);
    });
  return out;
}

template <class S>
Var row_softmax(Tape<S>& t, Var a) {
  // Logits this far below the row max get an exact zero weight (packet exp
  // would otherwise saturate masked entries to denormals, not 0).
  const S flush = std::is_same_v<S, double> ? S(-690) : S(-80);
  Mat<S> y = t.val(a);
  Eigen::Array<S, 1, Eigen::Dynamic> shifted(y.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const S mx = y.row(r).maxCoeff();
    shifted = y.row(r).array() - mx;
    y.row(r) = (shifted < flush).select(S(0), shifted.exp());
    y.row(r) /= y.row(r).sum();
  }
  const bool rg = t.requires_grad(a);
  Var out = t.push_op("row_softmax", std::move(y), rg);
  if (rg)
    t.set_back(out, [out, a](Tape<S>& tp) {
      const Mat<S>& yv = tp.val(out);
      const Mat<S>& g = tp.grad(out);
      Mat<S> dx(yv.rows(), yv.cols());
      for (Eigen::Index r = 0; r < yv.rows(); ++r) {
        const S dot = g.row(r).dot(yv.row(r));
        dx.row(r) =
            yv.row(r).array() * (g.row(r).array() - dot);
      }
      tp.accumulate(a, dx);
    });
  return out;
}

/// Row-wise normalization to mean 0 / variance 1 (population), then affine
/// gamma/beta (each 1 x n).
template <class S>
Var layer_norm(Tape<S>& t, Var x, Var gamma, Var beta, S eps = S(1e-5)) {
  const Mat<S>& X = t.val(x);
  const Mat<S>& G = t.val(gamma);
  const Mat<S>& B = t.val(beta);
  detail::require(G.rows() == 1 && B.rows() == 1 && G.cols() == X.cols() &&
                      B.cols() == X.cols(),
                  "layer_norm: gamma/beta must be 1 x n");
  const Eigen::Index n = X.cols();
  Mat<S> xhat(X.rows(), n);
  Mat<S> inv_std(X.rows(), 1);
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const S mu = X.row(r).mean();
    const S var = (X.row(r).array() - mu).square().sum() / static_cast<S>(n);
    const S is = S(1) / std::sqrt(var + eps);
    inv_std(r, 0) = is;
    xhat.row(r) = (X.row(r).array() - mu) * is;
  }
  Mat<S> y = xhat;
  for (Eigen::Index r = 0; r < y.rows(); ++r)
    y.row(r) = xhat.row(r).cwiseProduct(G.row(0)) + B.row(0);
  const bool rg =
      t.requires_grad(x) || t.requires_grad(gamma) || t.requires_grad(beta);
  Var out = t.push_op("layer_norm", std::move(y), rg);
  if (rg)
    t.set_back(out, [out, x, gamma, beta, xhat, inv_std](Tape<S>& tp) {
      const Mat<S>& g = tp.grad(out);
      const Mat<S>& G = tp.val(gamma);
      const Eigen::Index n = g.cols();
      tp.accumulate(beta, g.colwise().sum());
      tp.accumulate(gamma, (g.cwiseProduct(xhat)).colwise().sum());
      if (!tp.requires_grad(x)) return;
      Mat<S> dx(g.rows(), n);
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        Eigen::Matrix<S, 1, Eigen::Dynamic> dxhat =
            g.row(r).cwiseProduct(G.row(0));
        const S m1 = dxhat.mean();
        const S m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
        dx.row(r) =
            (dxhat.array() - m1 - xhat.row(r).array() * m2) * inv_std(r, 0);
      }
      tp.accumulate(x, dx);
    });
  return out;
}

template <class S>
Var relu(Tape<S>& t, Var a) {
  const Mat<S>& A = t.val(a);
  const bool rg = t.requires_grad(a);
  Var out = t.push_op("relu", A.cwiseMax(S(0)), rg);
  if (rg)
    t.set_back(out, [out, a](Tape<S>& tp) {
      const Mat<S>& A = tp.val(a);
      tp.accumulate(a, tp.grad(out).cwiseProduct(
                           (A.array() > S(0)).template cast<S>().matrix()));
    });
  return out;
}

template <class S>
Var sigmoid(Tape<S>& t, Var a) {
  Mat<S> y = t.val(a).unaryExpr(
      [](S v) { return S(1) / (S(1) + std::exp(-v)); });
  const bool rg = t.requires_grad(a);
  Var out = t.push_op("sigmoid", std::move(y), rg);
  if (rg)
    t.set_back(out, [out, a](Tape<S>& tp) {
      const Mat<S>& yv = tp.val(out);
      tp.accumulate(a, tp.grad(out).cwiseProduct(yv.cwiseProduct(
                           (Mat<S>::Ones(yv.rows(), yv.cols()) - yv))));
    });
  return out;
}

/// Mean over rows -> 1 x n. With `keep`, only flagged rows participate
/// (padding exclusion); `keep` empty means all rows.
template <class S>
Var mean_rows(Tape<S>& t, Var a, const std::vector<std::uint8_t>& keep = {}) {
  const Mat<S>& A = t.val(a);
  detail::require(keep.empty() ||
                      static_cast<Eigen::Index>(keep.size()) == A.rows(),
                  "mean_rows: keep mask length mismatch");
  Eigen::Index count = 0;
  Mat<S> out = Mat<S>::Zero(1, A.cols());
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    if (!keep.empty() && !keep[static_cast<std::size_t>(r)]) continue;
    out.row(0) += A.row(r);
    ++count;
  }
  detail::require(count > 0, "mean_rows: no rows selected");
  out /= static_cast<S>(count);
  const bool rg = t.requires_grad(a);
  Var o = t.push_op("mean_rows", std::move(out), rg);
  if (rg)
    t.set_back(o, [o, a, keep, count](Tape<S>& tp) {
      const Mat<S>& g = tp.grad(o);
      Mat<S> dx = Mat<S>::Zero(tp.val(a).rows(), tp.val(a).cols());
      for (Eigen::Index r = 0; r < dx.rows(); ++r) {
        if (!keep.empty() && !keep[static_cast<std::size_t>(r)]) continue;
        dx.row(r) = g.row(0) / static_cast<S>(count);
      }
      tp.accumulate(a, dx);
    });
  return o;
}

/// Pre-softmax mask: entries where allow == 0 are set to `fill` (a large
/// negative constant), so they receive exactly zero weight after softmax.
/// Gradient is zero at filled positions.
template <class S>
Var masked_fill(Tape<S>& t, Var a, const ByteMatrix& allow, S fill = S(-1e9)) {
  const Mat<S>& A = t.val(a);
  detail::require(allow.rows() == A.rows() && allow.cols() == A.cols(),
                  "masked_fill: mask shape mismatch");
  Mat<S> out = A;
  for (Eigen::Index r = 0; r < A.rows(); ++r)
    for (Eigen::Index c = 0; c < A.cols(); ++c)
      if (!allow(r, c)) out(r, c) = fill;
  const bool rg = t.requires_grad(a);
  Var o = t.push_op("masked_fill", std::move(out), rg);
  if (rg)
    t.set_back(o, [o, a, allow](Tape<S>& tp) {
      Mat<S> g = tp.grad(o);
      for (Eigen::Index r = 0; r < g.rows(); ++r)
        for (Eigen::Index c = 0; c < g.cols(); ++c)
          if (!allow(r, c)) g(r, c) = S(0);
      tp.accumulate(a, g);
    });
  return o;
}

/// Edge bias of the attention scores: out(q, k) += Q.row(q) . EK.row(p) for
/// each pair item p = (q, k, .). EK holds one projected feature row per item.
template <class S>
Var edge_key_scores(Tape<S>& t, Var q, Var ek, const EdgePairs& pairs,
                    Eigen::Index n_tokens) {
  const Mat<S>& Q = t.val(q);
  const Mat<S>& EK = t.val(ek);
  detail::require(Q.cols() == EK.cols(), "edge_key_scores: width mismatch");
  detail::require(EK.rows() == static_cast<Eigen::Index>(pairs.items.size()),
                  "edge_key_scores: one projected row per pair item expected");
  Mat<S> out = Mat<S>::Zero(n_tokens, n_tokens);
  for (std::size_t p = 0; p < pairs.items.size(); ++p) {
    const auto& it = pairs.items[p];
    out(it.q, it.k) += Q.row(it.q).dot(EK.row(static_cast<Eigen::Index>(p)));
  }
  const bool rg = t.requires_grad(q) || t.requires_grad(ek);
  Var o = t.push_op("edge_key_scores", std::move(out), rg);
  if (rg)
    t.set_back(o, [o, q, ek, pairs](Tape<S>& tp) {
      const Mat<S>& g = tp.grad(o);
      const Mat<S>& Q = tp.val(q);
      const Mat<S>& EK = tp.val(ek);
      Mat<S> dq = Mat<S>::Zero(Q.rows(), Q.cols());
      Mat<S> dek = Mat<S>::Zero(EK.rows(), EK.cols());
      for (std::size_t p = 0; p < pairs.items.size(); ++p) {
        const auto& it = pairs.items[p];
        const S gv = g(it.q, it.k);
        dq.row(it.q) += gv * EK.row(static_cast<Eigen::Index>(p));
        dek.row(static_cast<Eigen::Index>(p)) += gv * Q.row(it.q);
      }
      tp.accumulate(q, dq);
      tp.accumulate(ek, dek);
    });
  return o;
}

/// Edge bias of the attention output: out.row(q) += P(q, k) * EV.row(p) for
/// each pair item p = (q, k, .).
template <class S>
Var edge_value_mix(Tape<S>& t, Var p_attn, Var ev, const EdgePairs& pairs) {
  const Mat<S>& P = t.val(p_attn);
  const Mat<S>& EV = t.val(ev);
  detail::require(EV.rows() == static_cast<Eigen::Index>(pairs.items.size()),
                  "edge_value_mix: one projected row per pair item expected");
  Mat<S> out = Mat<S>::Zero(P.rows(), EV.cols());
  for (std::size_t p = 0; p < pairs.items.size(); ++p) {
    const auto& it = pairs.items[p];
    out.row(it.q) += P(it.q, it.k) * EV.row(static_cast<Eigen::Index>(p));
  }
  const bool rg = t.requires_grad(p_attn) || t.requires_grad(ev);
  Var o = t.push_op("edge_value_mix", std::move(out), rg);
  if (rg)
    t.set_back(o, [o, p_attn, ev, pairs](Tape<S>& tp) {
      const Mat<S>& g = tp.grad(o);
      const Mat<S>& P = tp.val(p_attn);
      const Mat<S>& EV = tp.val(ev);
      Mat<S> dp = Mat<S>::Zero(P.rows(), P.cols());
      Mat<S> dev = Mat<S>::Zero(EV.rows(), EV.cols());
      for (std::size_t p = 0; p < pairs.items.size(); ++p) {
        const auto& it = pairs.items[p];
        dp(it.q, it.k) += g.row(it.q).dot(EV.row(static_cast<Eigen::Index>(p)));
        dev.row(static_cast<Eigen::Index>(p)) += P(it.q, it.k) * g.row(it.q);
      }
      tp.accumulate(p_attn, dp);
      tp.accumulate(ev, dev);
    });
  return o;
}

/// Pair BCE term: -log(s_pos) - log(1 - s_neg), with scores clamped to
/// [1e-7, 1 - 1e-7]. Inputs and output are 1x1.
template <class S>
Var bce_pair(Tape<S>& t, Var s_pos, Var s_neg) {
  detail::require(t.val(s_pos).size() == 1 && t.val(s_neg).size() == 1,
                  "bce_pair: expected scalar scores");
  const S eps = S(1e-7);
  const S sp = std::clamp(t.val(s_pos)(0, 0), eps, S(1) - eps);
  const S sn = std::clamp(t.val(s_neg)(0, 0), eps, S(1) - eps);
  Mat<S> out(1, 1);
  out(0, 0) = -std::log(sp) - std::log(S(1) - sn);
  const bool rg = t.requires_grad(s_pos) || t.requires_grad(s_neg);
  Var o = t.push_op("bce_pair", std::move(out), rg);
  if (rg)
    t.set_back(o, [o, s_pos, s_neg, sp, sn](Tape<S>& tp) {
      const S g = tp.grad(o)(0, 0);
      Mat<S> dp(1, 1), dn(1, 1);
      dp(0, 0) = -g / sp;
      dn(0, 0) = g / (S(1) - sn);
      tp.accumulate(s_pos, dp);
      tp.accumulate(s_neg, dn);
    });
  return o;
}

/// Mean binary cross entropy of a column of probabilities against 0/1
/// labels, with the same clamping as bce_pair.
template <class S>
Var bce_mean(Tape<S>& t, Var s, const std::vector<int>& labels) {
  const Mat<S>& P = t.val(s);
  detail::require(P.cols() == 1 &&
                      P.rows() == static_cast<Eigen::Index>(labels.size()),
                  "bce_mean: expected (m x 1) scores and m labels");
  const S eps = S(1e-7);
  const Eigen::Index m = P.rows();
  Mat<S> clamped = P.unaryExpr(
      [eps](S v) { return std::clamp(v, eps, S(1) - eps); });
  S sum = S(0);
  for (Eigen::Index i = 0; i < m; ++i)
    sum += labels[static_cast<std::size_t>(i)] > 0
               ? -std::log(clamped(i, 0))
               : -std::log(S(1) - clamped(i, 0));
  Mat<S> out(1, 1);
  out(0, 0) = sum / static_cast<S>(m);
  const bool rg = t.requires_grad(s);
  Var o = t.push_op("bce_mean", std::move(out), rg);
  if (rg)
    t.set_back(o, [o, s, labels, clamped](Tape<S>& tp) {
      const S g = tp.grad(o)(0, 0);
      const Eigen::Index m = clamped.rows();
      Mat<S> ds(m, 1);
      for (Eigen::Index i = 0; i < m; ++i)
        ds(i, 0) = labels[static_cast<std::size_t>(i)] > 0
                       ? -g / (clamped(i, 0) * static_cast<S>(m))
                       : g / ((S(1) - clamped(i, 0)) * static_cast<S>(m));
      tp.accumulate(s, ds);
    });
  return o;
}

// --- Parameter storage -------------------------------------------------------

enum class Init { kXavier, kZeros, kOnes };

/// Named parameter registry. Registration order is the serialization and
/// initialization order, so a fixed seed yields identical weights run to run.
template <class S>
struct ParamSet {
  struct Entry {
    std::string name;
    Mat<S> value;
    Init init;
  };
  std::vector<Entry> entries;

  int add(std::string name, Eigen::Index rows, Eigen::Index cols, Init init) {
    entries.push_back({std::move(name), Mat<S>::Zero(rows, cols), init});
    return static_cast<int>(entries.size()) - 1;
  }

  Mat<S>& value(int i) { return entries[static_cast<std::size_t>(i)].value; }
  const Mat<S>& value(int i) const {
    return entries[static_cast<std::size_t>(i)].value;
  }
  std::size_t count() const { return entries.size(); }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name == name) return static_cast<int>(i);
    return -1;
  }

  // Xavier-uniform weights, zero biases, unit norm gains. Values are drawn
  // in double and cast, so f32 and f64 runs start from matching weights.
  void init_values(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x1417));
    for (Entry& e : entries) {
      switch (e.init) {
        case Init::kZeros:
          e.value.setZero();
          break;
        case Init::kOnes:
          e.value.setOnes();
          break;
        case Init::kXavier: {
          const double limit = std::sqrt(
              6.0 / static_cast<double>(e.value.rows() + e.value.cols()));
          for (Eigen::Index r = 0; r < e.value.rows(); ++r)
            for (Eigen::Index c = 0; c < e.value.cols(); ++c)
              e.value(r, c) = static_cast<S>(rng.uniform(-limit, limit));
          break;
        }
      }
    }
  }

  std::int64_t total_scalars() const {
    std::int64_t n = 0;
    for (const Entry& e : entries) n += e.value.size();
    return n;
  }
};

/// Per-parameter gradient accumulator aligned with a ParamSet. Workers hold
/// one each; buffers merge in fixed worker order for determinism.
template <class S>
struct GradSet {
  std::vector<Mat<S>> g;

  GradSet() = default;
  explicit GradSet(const ParamSet<S>& p) {
    g.reserve(p.count());
    for (const auto& e : p.entries)
      g.push_back(Mat<S>::Zero(e.value.rows(), e.value.cols()));
  }

  void zero() {
    for (auto& m : g) m.setZero();
  }

  void add(int i, const Mat<S>& grad) { g[static_cast<std::size_t>(i)] += grad; }

  void merge(const GradSet& other) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += other.g[i];
  }
};

}  // namespace cordgt
