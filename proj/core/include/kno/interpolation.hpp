#pragma once

#include <memory>

#include "kno/kernels.hpp"
#include "kno/tensor.hpp"

namespace kno {

/// Cached sparse SPD factorization of the kernel Gram on a node set. One
/// factorization serves every sample fitted on the same grid with the same
/// shape parameter. Sparse Cholesky (LDLT) with a conjugate-gradient fallback.
class InterpFactorization {
 public:
  InterpFactorization(const Tensor& nodes, const KernelSpec& kernel);

  /// Solve G X = rhs for X, column by column; rhs is [N_T, k].
  Tensor solve(const Tensor& rhs) const;

  double min_pivot() const;
  bool used_fallback() const;
  const CsrMatrix& gram() const;
  /// Pair distances aligned with gram().val (for shape-parameter gradients).
  const std::vector<double>& pair_dists() const;
  const Tensor& nodes() const;
  const KernelSpec& kernel() const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

/// Kernel interpolant on a node set: f(x) = sum_n c_n K(x, x_n).
struct Interpolant {
  Tensor nodes;    // [N_T, d]
  KernelSpec kernel;
  Tensor coeffs;   // [N_T, d_u]
  std::shared_ptr<InterpFactorization> factorization;
};

/// Solves the kernel Gram system G c = values. Distinct nodes required
/// (pairs closer than 1e-12 are rejected as a data bug).
Interpolant interp_fit(const Tensor& nodes, const Tensor& values, const KernelSpec& kernel);

/// Same fit reusing a cached factorization (batched fits across samples).
Interpolant interp_fit(const std::shared_ptr<InterpFactorization>& fact, const Tensor& values);

/// Evaluate at query points via the sparse cross-Gram; returns [Q, d_u].
Tensor interp_eval(const Interpolant& interp, const Tensor& points);

}  // namespace kno
