#include "dilocox/optim.hpp"

#include <cmath>

namespace dilocox {

AdamWState make_adamw_state(const ParamSet& params, const AdamWHyper& hyper) {
  AdamWState st;
  st.m = ParamSet::zeros_like(params);
  st.v = ParamSet::zeros_like(params);
  st.hyper = hyper;
  return st;
}

void adamw_step(AdamWState& state, ParamSet& params, const ParamSet& grads) {
  if (!params.same_layout(grads) || !params.same_layout(state.m))
    throw ShapeError("adamw_step: parameter/gradient layouts disagree");
  const AdamWHyper& h = state.hyper;
  state.step += 1;
  const float bc1 = 1.0f - std::pow(h.beta1, static_cast<float>(state.step));
  const float bc2 = 1.0f - std::pow(h.beta2, static_cast<float>(state.step));
  float lr = h.lr;
  if (h.warmup_steps > 0 && state.step < h.warmup_steps)
    lr = h.lr * static_cast<float>(state.step) / static_cast<float>(h.warmup_steps);
  const float inv_bc1 = 1.0f / bc1;
  const float inv_bc2 = 1.0f / bc2;

  // Any NaN/Inf gradient poisons the probe sum.
  float probe = 0.0f;
  for (int i = 0; i < params.count(); ++i) {
    float* p = params.tensor(i).data();
    const float* g = grads.tensor(i).data();
    float* m = state.m.tensor(i).data();
    float* v = state.v.tensor(i).data();
    const int64_t n = params.tensor(i).size();
    for (int64_t k = 0; k < n; ++k) {
      const float gk = g[k];
      probe += gk * 0.0f;
      m[k] = h.beta1 * m[k] + (1.0f - h.beta1) * gk;
      v[k] = h.beta2 * v[k] + (1.0f - h.beta2) * gk * gk;
      const float mhat = m[k] * inv_bc1;
      const float vhat = v[k] * inv_bc2;
      p[k] -= lr * (mhat / (std::sqrt(vhat) + h.eps) + h.weight_decay * p[k]);
    }
  }
  if (!std::isfinite(probe)) throw NumericError("adamw_step: non-finite gradient");
}

NesterovState make_nesterov_state(const ParamSet& params, const NesterovHyper& hyper) {
  NesterovState st;
  st.velocity = ParamSet::zeros_like(params);
  st.hyper = hyper;
  return st;
}

void nesterov_outer_step(NesterovState& state, ParamSet& anchor, const ParamSet& delta) {
  if (!anchor.same_layout(delta) || !anchor.same_layout(state.velocity))
    throw ShapeError("nesterov_outer_step: layouts disagree");
  const float gamma = state.hyper.lr;
  const float beta = state.hyper.momentum;
  for (int i = 0; i < anchor.count(); ++i) {
    float* a = anchor.tensor(i).data();
    const float* d = delta.tensor(i).data();
    float* v = state.velocity.tensor(i).data();
    const int64_t n = anchor.tensor(i).size();
    if (state.hyper.classical) {
      for (int64_t k = 0; k < n; ++k) {
        v[k] = beta * v[k] + d[k];
        a[k] -= gamma * v[k];
      }
    } else {
      for (int64_t k = 0; k < n; ++k) {
        v[k] = beta * v[k] + d[k];
        a[k] -= gamma * (d[k] + beta * v[k]);
      }
    }
  }
}

}  // namespace dilocox
