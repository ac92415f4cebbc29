#pragma once

#include "dilocox/params.hpp"

namespace dilocox {

struct AdamWHyper {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.95f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
  // Linear warmup of the learning rate over the first `warmup_steps` steps
  // of the (persistent) step counter; 0 disables it.
  int64_t warmup_steps = 0;
};

struct AdamWState {
  ParamSet m;
  ParamSet v;
  int64_t step = 0;
  AdamWHyper hyper;
};

AdamWState make_adamw_state(const ParamSet& params, const AdamWHyper& hyper);

// Bias-corrected AdamW with decoupled weight decay, applied in place.
void adamw_step(AdamWState& state, ParamSet& params, const ParamSet& grads);

struct NesterovHyper {
  float lr = 0.7f;        // outer learning rate (gamma)
  float momentum = 0.9f;  // outer momentum (beta)
  bool classical = false; // classical momentum instead of the Nesterov form
};

struct NesterovState {
  ParamSet velocity;
  NesterovHyper hyper;
};

NesterovState make_nesterov_state(const ParamSet& params, const NesterovHyper& hyper);

// Outer step on the averaged pseudo-gradient. `delta` follows the
// anchor-minus-local sign convention, so descent subtracts it:
//   v      <- beta * v + delta
//   anchor <- anchor - gamma * (delta + beta * v)   (Nesterov form)
//   anchor <- anchor - gamma * v                    (classical form)
void nesterov_outer_step(NesterovState& state, ParamSet& anchor, const ParamSet& delta);

}  // namespace dilocox
