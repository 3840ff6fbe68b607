#include "kno/optim.hpp"

#include <cmath>
#include <string>

#include "kno/errors.hpp"

namespace kno {

AdamState make_adam_state(const std::vector<Tensor*>& params, double beta1, double beta2,
                          double delta) {
  AdamState s;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.delta = delta;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const Tensor* p : params) {
    s.m.push_back(Tensor::zeros(p->shape));
    s.v.push_back(Tensor::zeros(p->shape));
  }
  return s;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ContractViolation("adam_step: parameter/gradient/state counts differ");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = *grads[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (!p.same_shape(g) || !p.same_shape(m))
      throw ContractViolation("adam_step: shape mismatch at parameter " + std::to_string(k) +
                              " (" + p.shape_str() + " vs " + g.shape_str() + ")");
    for (std::int64_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + state.delta);
    }
  }
}

double lr_at(const LrSchedule& schedule, long epoch) {
  if (epoch < 0) throw ContractViolation("lr_at: epoch must be >= 0");
  if (schedule.cycle_length <= 0) throw ContractViolation("lr_at: cycle_length must be > 0");
  const long phase = epoch % schedule.cycle_length;
  const double x = static_cast<double>(phase) / static_cast<double>(schedule.cycle_length);
  return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + std::cos(M_PI * x));
}

}  // namespace kno
