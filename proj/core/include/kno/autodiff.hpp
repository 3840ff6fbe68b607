#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "kno/tensor.hpp"

namespace kno {

using VarId = std::int32_t;

/// Record of a forward computation. Nodes are appended in evaluation order,
/// so every node's inputs precede it and one reverse sweep is a full backward
/// pass. Single-threaded by design; batch parallelism uses one tape per shard.
class Tape {
 public:
  // backward(gout, tape, grads): accumulate into grads[parent] for each parent.
  using BackwardFn = std::function<void(const Tensor&, Tape&, std::vector<Tensor>&)>;

  struct Node {
    const char* op;
    Tensor value;
    std::vector<VarId> parents;
    BackwardFn backward;  // null for leaves and constants
  };

  /// Trainable leaf (gradients are reported for it).
  VarId leaf(Tensor value);
  /// Non-trainable input; backward never flows into it.
  VarId constant(Tensor value);
  /// Generic node; used by the built-in primitives and by model-level ops.
  VarId push(const char* op, Tensor value, std::vector<VarId> parents, BackwardFn backward);

  const Tensor& val(VarId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Node& node(VarId id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(nodes_.size()); }

  /// When set, every pushed value is scanned for NaN/Inf (on by default).
  bool finite_checks = true;

 private:
  std::vector<Node> nodes_;
};

// ---- primitives -----------------------------------------------------------

VarId add(Tape& t, VarId a, VarId b);        // same shape
VarId sub(Tape& t, VarId a, VarId b);        // same shape
VarId mul(Tape& t, VarId a, VarId b);        // elementwise, same shape
VarId scale(Tape& t, VarId a, double c);
VarId vexp(Tape& t, VarId a);
VarId vcos(Tape& t, VarId a);
VarId vpow(Tape& t, VarId a, double p);      // elementwise power, a > 0 unless p integral
VarId gelu(Tape& t, VarId a);                // exact erf form
VarId softplus(Tape& t, VarId a);
VarId sum(Tape& t, VarId a);                 // -> scalar
VarId pick(Tape& t, VarId a, std::int64_t flat_index);  // -> scalar

VarId matmul(Tape& t, VarId a, VarId b);     // [m,k] x [k,n]
VarId add_bias(Tape& t, VarId a, VarId b);   // [m,n] + broadcast [1,n]

// Batched channels-first activations have shape [M, C, N]: M samples,
// C channels, N spatial points; each channel row is contiguous.
VarId concat_channels(Tape& t, VarId a, VarId b);             // [M,c1,N] ++ [M,c2,N]
VarId append_const_channels(Tape& t, VarId a, Tensor extra);  // extra [ce,N] repeated per sample
VarId linear_channels(Tape& t, VarId g, VarId w, VarId b);    // out[m] = W^T g[m] (+ bias), b = -1 to skip

/// Mean over samples of squared relative L2 error against fixed targets.
VarId rel_mse_loss(Tape& t, VarId pred, const Tensor& targets);

/// Reverse pass from a scalar loss. Returns d(loss)/d(param) for each
/// requested id; parameters the loss does not reach get zero gradients.
std::unordered_map<VarId, Tensor> grad(Tape& t, VarId loss, const std::vector<VarId>& params);

// Shared gradient-buffer helper for custom ops: zero-initialises on first use.
Tensor& grad_buffer(std::vector<Tensor>& grads, VarId id, const std::vector<std::int64_t>& shape);

// Exact GeLU scalar helpers (shared with oracles and kernels).
double gelu_value(double x);
double gelu_derivative(double x);
double softplus_value(double x);
double softplus_derivative(double x);
double inverse_softplus(double y);  // y > 0

}  // namespace kno
