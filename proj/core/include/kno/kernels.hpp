#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kno/tensor.hpp"

namespace kno {

enum class KernelKind { wendland_c4, gaussian, matern_c4, spectral_mixture };

const char* kernel_kind_name(KernelKind kind);
KernelKind kernel_kind_from_name(const std::string& name);

/// A parameterized closed-form kernel. `raw` holds pre-transform trainable
/// parameters; shape/scale parameters go through softplus to stay positive.
/// Radial kinds carry one raw parameter (the shape eps). The spectral mixture
/// carries, per Gaussian r in {1,2}: [lambda_r, mu_r (d entries), nu_r raw
/// (d entries)], concatenated; lambda and mu are unconstrained.
struct KernelSpec {
  KernelKind kind = KernelKind::wendland_c4;
  int dim = 1;
  std::vector<double> raw;

  double eps() const;  // softplus(raw[0]), radial kinds only
  static std::int64_t raw_size(KernelKind kind, int dim);
};

KernelSpec make_radial_spec(KernelKind kind, int dim, double raw_eps);
KernelSpec make_spectral_mixture_spec(int dim, std::vector<double> raw);

// ---- closed forms ----------------------------------------------------------

/// Wendland C4 kernel: (max(0, 1 - eps*r))^6 (35 (eps r)^2 + 18 eps r + 3).
/// Identically zero for r >= 1/eps; phi(0) = 3.
double wendland_c4(double r, double eps);
/// d/dt of the Wendland C4 profile at t = eps*r: -56 t (5t + 1)(1-t)_+^5.
double wendland_c4_dt(double t);

double gaussian_kernel(double r, double eps);    // exp(-(eps r)^2)
double gaussian_kernel_dt(double t);             // d/dt exp(-t^2)
double matern_c4_kernel(double r, double eps);   // (1 + sqrt5 t + 5/3 t^2) exp(-sqrt5 t)
double matern_c4_kernel_dt(double t);

/// Radial profile dispatch on t = eps*r for the non-mixture kinds.
double radial_profile(KernelKind kind, double t);
double radial_profile_dt(KernelKind kind, double t);

/// Spectral mixture of two Gaussians evaluated at lag tau (post-transform
/// parameters): sum_r lambda_r prod_p cos(2 pi tau_p mu_rp) exp(-2 pi^2
/// tau_p^2 nu_rp). theta layout per Gaussian r: [lambda_r, mu_r(d), nu_r(d)].
double spectral_mixture(const double* tau, int dim, const double* theta);
/// Accumulates coeff * d(psi)/d(theta) into dtheta (same layout as theta).
void spectral_mixture_grad(const double* tau, int dim, const double* theta, double coeff,
                           double* dtheta);

/// Kernel value at a pair of points; applies the positivity transform to raw
/// parameters internally.
double kernel_eval(const KernelSpec& spec, const double* x, const double* y);
double kernel_eval(const KernelSpec& spec, const Tensor& x, const Tensor& y);
/// d kernel_eval / d raw parameters (same length as spec.raw), accumulated
/// into grad with unit coefficient.
void kernel_eval_raw_grad(const KernelSpec& spec, const double* x, const double* y, double* grad);

// ---- Gram matrices ---------------------------------------------------------

struct CsrMatrix {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<std::int64_t> row_ptr;  // rows + 1 entries
  std::vector<std::int32_t> col;      // ascending within each row
  std::vector<double> val;

  std::int64_t nnz() const { return static_cast<std::int64_t>(val.size()); }
  Tensor to_dense() const;
  /// y += alpha * A x
  void apply(const double* x, double* y, double alpha = 1.0) const;
  /// y += alpha * A^T x
  void apply_transposed(const double* x, double* y, double alpha = 1.0) const;
};

/// Entry (i,j) stored iff ||x_i - y_j|| < 1/eps; values are kernel evaluations.
/// Pattern is found with a cell list over Y, so assembly is O(n) for
/// quasi-uniform points. If `dists` is non-null it receives the pair distances
/// aligned with `val` (used for shape-parameter gradients).
CsrMatrix wendland_gram_csr(const Tensor& X, const Tensor& Y, double eps,
                            std::vector<double>* dists = nullptr);

/// Gram matrix with the storage the kernel calls for: compressed sparse rows
/// for the compactly-supported Wendland kernel, dense otherwise.
struct GramMatrix {
  bool sparse = false;
  CsrMatrix csr;  // when sparse
  Tensor dense;   // when dense, shape [rows, cols]

  std::int64_t rows() const { return sparse ? csr.rows : dense.shape[0]; }
  std::int64_t cols() const { return sparse ? csr.cols : dense.shape[1]; }
  double value_at(std::int64_t i, std::int64_t j) const;
};

GramMatrix gram(const KernelSpec& spec, const Tensor& X, const Tensor& Y);

}  // namespace kno
