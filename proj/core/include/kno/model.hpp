#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "kno/autodiff.hpp"
#include "kno/interpolation.hpp"
#include "kno/kernels.hpp"
#include "kno/quadrature.hpp"
#include "kno/tensor.hpp"

namespace kno {

/// Channel -> trainable-kernel assignment. Surjective, monotone
/// non-decreasing, contiguous balanced blocks; kernels are zero-based here.
struct ChannelIndexMap {
  int p = 0;
  int q = 0;
  std::vector<int> kernel_of_channel;  // length p, values in [0, q)
};

/// channel j (1-based) -> kernel ceil(j*q/p); requires 1 <= q <= p.
ChannelIndexMap make_index_map(int p, int q);

/// Integral operator block on the quadrature points, with the cross-channel
/// affine transformation. One trainable shape parameter per kernel.
struct IntegralBlock {
  KernelKind kind = KernelKind::wendland_c4;
  Tensor raw_eps;  // [q], pre-softplus
  Tensor W;        // [p, p]
  Tensor b;        // [p]
};

/// Last integral operator: maps quadrature values to the output grid, no
/// affine term. Spectral mixture by default; radial kinds for comparisons.
struct FinalBlock {
  KernelKind kind = KernelKind::spectral_mixture;
  // spectral-mixture parameters; rows indexed by kernel, Gaussians r=1,2
  // stored as [r1 entries..., r2 entries...] within each row
  Tensor lambda;   // [q, 2]
  Tensor mu;       // [q, 2*d]
  Tensor raw_nu;   // [q, 2*d], pre-softplus
  // radial alternative
  Tensor raw_eps;  // [q], pre-softplus
};

struct ModelConfig {
  int d = 1;    // spatial dimension
  int d_u = 1;  // input channels
  int d_y = 1;  // output channels
  int p = 64;   // latent channels
  int q = 64;   // trainable kernels per block, q <= p
  int L_minus_1 = 4;
  KernelKind block_kind = KernelKind::wendland_c4;
  KernelKind final_kind = KernelKind::spectral_mixture;
  std::string normalization = "zscore";  // "zscore" | "none", echoed to checkpoints
};

/// Reuses kernel matrices, interpolation factorizations and mixture tables
/// across forward builds within one optimizer step (they depend only on the
/// kernel parameters, not on the batch).
struct OpCache;

/// The full trainable architecture plus its fixed geometry (training grid and
/// quadrature rule). All latent widths equal p.
struct KnoModel {
  ModelConfig config;
  Tensor lift_W;  // [(d_u + d), p]
  Tensor lift_b;  // [p]
  std::vector<IntegralBlock> blocks;  // L-1 blocks
  FinalBlock final_block;
  Tensor proj_W1, proj_b1;  // [p,p], [p]
  Tensor proj_W2, proj_b2;  // [p,p], [p]
  Tensor proj_W3, proj_b3;  // [p,d_y], [d_y]
  ChannelIndexMap index_map;
  QuadRule quad;
  Tensor train_grid;      // [N_T, d]
  Tensor interp_raw_eps;  // [1], pre-softplus
  std::shared_ptr<OpCache> op_cache;  // created by make_model
};

/// Allocates all parameter tensors (zero-filled) for a config + geometry.
KnoModel make_model(const ModelConfig& config, QuadRule quad, Tensor train_grid);

/// Ordered registry of the trainable tensors (checkpoint layer order).
struct ParamRef {
  std::string name;
  Tensor* tensor;
  bool kernel_param;  // initialized N(1, 0.01) per the kernel rule
  bool kernel_shape;  // enters the shape-parameter regularizer
  int layer;          // -1 lift/proj/interp, 0..L-2 blocks, L-1 final block
};
std::vector<ParamRef> model_parameters(KnoModel& model);

std::int64_t count_parameters(const KnoModel& model);

/// Flat parameter vector in the documented order: lift W, b; per block
/// raw_eps, W, b; final block per kernel lambda1, mu1, nu1, lambda2, mu2,
/// nu2; projection layers; interpolant eps last.
std::vector<double> flatten_parameters(const KnoModel& model);
void unflatten_parameters(KnoModel& model, const std::vector<double>& flat);

/// Checkpoint: one JSON header line (config, geometry, ordering version,
/// rng seed) followed by the little-endian float64 parameter vector.
void save_checkpoint(const KnoModel& model, const std::string& path, std::uint64_t rng_seed);
KnoModel load_checkpoint(const std::string& path, std::uint64_t* rng_seed = nullptr);

// ---- forward graph ---------------------------------------------------------

/// Handles to the leaves of one forward build, aligned with model_parameters.
struct ForwardGraph {
  std::unique_ptr<Tape> tape;
  VarId prediction = -1;            // [M, d_y, N_out]
  std::vector<VarId> leaves;        // one per ParamRef
  std::vector<VarId> shape_leaves;  // subset entering the regularizer
};

/// Builds the full forward pass for a batch of inputs in channels-first
/// layout [M, d_u, N_T]. output_points defaults to the training grid.
ForwardGraph build_forward(KnoModel& model, const Tensor& inputs_cf,
                           const Tensor* output_points = nullptr, bool finite_checks = true);

/// Single-sample forward: f sampled on the training grid, [N_T, d_u]
/// node-major; returns [N_out, d_y]. Same code path as training.
Tensor forward(KnoModel& model, const Tensor& f_on_grid, const Tensor* output_points = nullptr);

// ---- tape ops (exposed for tests and diagnostics) ---------------------------

/// S[m,j,:] = G_{I(j)} (w ⊙ g[m,j,:]) with G_i the radial Gram on the rule
/// points at shape eps[i] (sparse for Wendland).
VarId gram_contract_op(Tape& t, VarId eps, VarId g, const QuadRule& rule,
                       const ChannelIndexMap& map, KernelKind kind, OpCache* cache = nullptr,
                       int slot = 0);

/// out[m,j,t] = sum_b psi_{I(j)}(x_t - y_b) w_b g[m,j,b] for the spectral
/// mixture; lambda [q,2], mu and nu [q,2d] (nu post-softplus).
VarId mixture_contract_op(Tape& t, VarId lambda, VarId mu, VarId nu, VarId g,
                          const Tensor& out_points, const QuadRule& rule,
                          const ChannelIndexMap& map, OpCache* cache = nullptr, int slot = 0);

/// Radial variant of the final block (appendix comparisons): cross Gram from
/// rule points to out_points, no affine term.
VarId radial_final_contract_op(Tape& t, VarId eps, VarId g, const Tensor& out_points,
                               const QuadRule& rule, const ChannelIndexMap& map, KernelKind kind,
                               OpCache* cache = nullptr, int slot = 0);

/// coeffs = G(eps)^{-1} values for every sample/channel; values [M,d_u,N_T]
/// are fixed data. Gradient flows into eps through the adjoint solve.
VarId interp_fit_op(Tape& t, VarId eps, const Tensor& values_cf, const Tensor& nodes,
                    OpCache* cache = nullptr, int slot = 0);

/// Evaluates the interpolant at points via the sparse cross-Gram.
VarId interp_eval_op(Tape& t, VarId eps, VarId coeffs, const Tensor& points, const Tensor& nodes,
                     OpCache* cache = nullptr, int slot = 0);

/// Fraction of zero entries in the dense-equivalent Gram of block `layer`,
/// averaged over that block's kernels (feeds the sparsity report).
double block_gram_zero_fraction(const KnoModel& model, int layer);

}  // namespace kno
