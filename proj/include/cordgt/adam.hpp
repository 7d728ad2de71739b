#pragma once

#include <cmath>

#include "cordgt/tensor.hpp"

namespace cordgt {

/// Adam with bias correction; moments are allocated per parameter on first
/// use and must match the ParamSet the state was built for.
template <class S>
struct AdamState {
  S lr = S(0.001);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
  std::int64_t step = 0;
  std::vector<Mat<S>> m, v;

  explicit AdamState(const ParamSet<S>& p, S learning_rate = S(0.001))
      : lr(learning_rate) {
    m.reserve(p.count());
    v.reserve(p.count());
    for (const auto& e : p.entries) {
      m.push_back(Mat<S>::Zero(e.value.rows(), e.value.cols()));
      v.push_back(Mat<S>::Zero(e.value.rows(), e.value.cols()));
    }
  }
};

template <class S>
void adam_step(ParamSet<S>& params, const GradSet<S>& grads,
               AdamState<S>& state) {
  state.step += 1;
  const S bc1 = S(1) - std::pow(state.beta1, static_cast<S>(state.step));
  const S bc2 = S(1) - std::pow(state.beta2, static_cast<S>(state.step));
  for (std::size_t i = 0; i < params.count(); ++i) {
    const Mat<S>& g = grads.g[i];
    Mat<S>& m = state.m[i];
    Mat<S>& v = state.v[i];
    m = state.beta1 * m + (S(1) - state.beta1) * g;
    v = state.beta2 * v + (S(1) - state.beta2) * g.cwiseProduct(g);
    params.value(static_cast<int>(i)).array() -=
        state.lr * (m.array() / bc1) /
        ((v.array() / bc2).sqrt() + state.eps);
  }
}

}  // namespace cordgt
