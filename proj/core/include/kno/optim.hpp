#pragma once

#include <vector>

#include "kno/tensor.hpp"

namespace kno {

/// Adam moment accumulators for a fixed list of parameter tensors.
struct AdamState {
  std::vector<Tensor> m;  // first moments, one per parameter
  std::vector<Tensor> v;  // second moments, entries >= 0
  long t = 0;             // step count, +1 per adam_step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double delta = 1e-8;
};

AdamState make_adam_state(const std::vector<Tensor*>& params, double beta1 = 0.9,
                          double beta2 = 0.999, double delta = 1e-8);

/// Standard Adam update with bias correction, in place.
void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, double lr);

/// Cyclic cosine annealing: restarts every cycle_length epochs.
struct LrSchedule {
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  long cycle_length = 1;  // epochs per cycle, > 0
};

double lr_at(const LrSchedule& schedule, long epoch);

}  // namespace kno
