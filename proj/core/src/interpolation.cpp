#include "kno/interpolation.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <cmath>
#include <string>

#include "kno/errors.hpp"

namespace kno {

namespace {

using SpMat = Eigen::SparseMatrix<double>;

void reject_near_duplicates(const Tensor& nodes) {
  const std::int64_t n = nodes.shape[0];
  const std::int64_t d = nodes.shape[1];
  // Indicates a data bug, not a numeric one; reject instead of regularizing.
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::int64_t a = 0; a < d; ++a) {
        const double diff = nodes.at(i, a) - nodes.at(j, a);
        s += diff * diff;
      }
      if (std::sqrt(s) < 1e-12)
        throw ContractViolation("interp_fit: near-duplicate nodes " + std::to_string(i) + " and " +
                                std::to_string(j));
    }
}

}  // namespace

struct InterpFactorization::Impl {
  Tensor nodes;
  KernelSpec kernel;
  CsrMatrix gram;
  std::vector<double> dists;
  SpMat G;
  Eigen::SimplicialLDLT<SpMat> ldlt;
  bool ldlt_ok = false;
  double min_pivot = 0.0;
};

InterpFactorization::InterpFactorization(const Tensor& nodes, const KernelSpec& kernel)
    : impl_(std::make_shared<Impl>()) {
  if (nodes.rank() != 2) throw ContractViolation("InterpFactorization: nodes must be [N,d]");
  if (kernel.kind == KernelKind::spectral_mixture)
    throw ContractViolation("InterpFactorization: interpolation kernel must be radial");
  reject_near_duplicates(nodes);
  impl_->nodes = nodes;
  impl_->kernel = kernel;

  const double eps = kernel.eps();
  if (kernel.kind == KernelKind::wendland_c4) {
    impl_->gram = wendland_gram_csr(nodes, nodes, eps, &impl_->dists);
  } else {
    // Dense kinds stored through the same CSR plumbing.
    const std::int64_t n = nodes.shape[0];
    CsrMatrix& A = impl_->gram;
    A.rows = A.cols = n;
    A.row_ptr.resize(static_cast<std::size_t>(n) + 1);
    A.col.resize(static_cast<std::size_t>(n * n));
    A.val.resize(static_cast<std::size_t>(n * n));
    impl_->dists.resize(static_cast<std::size_t>(n * n));
    const std::int64_t d = nodes.shape[1];
    for (std::int64_t i = 0; i < n; ++i) {
      A.row_ptr[static_cast<std::size_t>(i)] = i * n;
      for (std::int64_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::int64_t a = 0; a < d; ++a) {
          const double diff = nodes.at(i, a) - nodes.at(j, a);
          s += diff * diff;
        }
        const double r = std::sqrt(s);
        A.col[static_cast<std::size_t>(i * n + j)] = static_cast<std::int32_t>(j);
        A.val[static_cast<std::size_t>(i * n + j)] = radial_profile(kernel.kind, eps * r);
        impl_->dists[static_cast<std::size_t>(i * n + j)] = r;
      }
    }
    A.row_ptr[static_cast<std::size_t>(n)] = n * n;
  }

  const std::int64_t n = nodes.shape[0];
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(impl_->gram.val.size());
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = impl_->gram.row_ptr[i]; k < impl_->gram.row_ptr[i + 1]; ++k)
      trips.emplace_back(static_cast<int>(i), impl_->gram.col[k], impl_->gram.val[k]);
  impl_->G.resize(static_cast<int>(n), static_cast<int>(n));
  impl_->G.setFromTriplets(trips.begin(), trips.end());
  impl_->G.makeCompressed();

  impl_->ldlt.compute(impl_->G);
  if (impl_->ldlt.info() == Eigen::Success) {
    impl_->min_pivot = impl_->ldlt.vectorD().minCoeff();
    impl_->ldlt_ok = impl_->min_pivot > 0.0;
  }
}

Tensor InterpFactorization::solve(const Tensor& rhs) const {
  const std::int64_t n = impl_->nodes.shape[0];
  if (rhs.rank() != 2 || rhs.shape[0] != n)
    throw ContractViolation("InterpFactorization::solve: rhs must be [N_T, k]");
  const std::int64_t k = rhs.shape[1];
  Eigen::MatrixXd B(n, k);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < k; ++j) B(i, j) = rhs.at(i, j);
  Eigen::MatrixXd X;
  if (impl_->ldlt_ok) {
    X = impl_->ldlt.solve(B);
  } else {
    // Conjugate-gradient fallback; the Gram is SPD by kernel choice.
    Eigen::ConjugateGradient<SpMat, Eigen::Lower | Eigen::Upper> cg;
    cg.setTolerance(1e-12);
    cg.setMaxIterations(static_cast<int>(10 * n));
    cg.compute(impl_->G);
    X = cg.solve(B);
    if (cg.info() != Eigen::Success)
      throw ConditioningError(
          "interp solve failed: LDLT min pivot " + std::to_string(impl_->min_pivot) +
              ", CG did not converge in " + std::to_string(10 * n) + " iterations",
          impl_->min_pivot);
  }
  Tensor out = Tensor::zeros({n, k});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < k; ++j) out.at(i, j) = X(i, j);
  out.check_finite("interp solve");
  return out;
}

double InterpFactorization::min_pivot() const { return impl_->min_pivot; }
bool InterpFactorization::used_fallback() const { return !impl_->ldlt_ok; }
const CsrMatrix& InterpFactorization::gram() const { return impl_->gram; }
const std::vector<double>& InterpFactorization::pair_dists() const { return impl_->dists; }
const Tensor& InterpFactorization::nodes() const { return impl_->nodes; }
const KernelSpec& InterpFactorization::kernel() const { return impl_->kernel; }

Interpolant interp_fit(const Tensor& nodes, const Tensor& values, const KernelSpec& kernel) {
  auto fact = std::make_shared<InterpFactorization>(nodes, kernel);
  return interp_fit(fact, values);
}

Interpolant interp_fit(const std::shared_ptr<InterpFactorization>& fact, const Tensor& values) {
  if (values.rank() != 2 || values.shape[0] != fact->nodes().shape[0])
    throw ContractViolation("interp_fit: values must be [N_T, d_u]");
  Interpolant interp;
  interp.nodes = fact->nodes();
  interp.kernel = fact->kernel();
  interp.coeffs = fact->solve(values);
  interp.factorization = fact;
  return interp;
}

Tensor interp_eval(const Interpolant& interp, const Tensor& points) {
  if (points.rank() != 2 || points.shape[1] != interp.nodes.shape[1])
    throw ContractViolation("interp_eval: points must be [Q," +
                            std::to_string(interp.nodes.shape[1]) + "]");
  const std::int64_t q = points.shape[0];
  const std::int64_t du = interp.coeffs.shape[1];
  Tensor out = Tensor::zeros({q, du});
  if (interp.kernel.kind == KernelKind::wendland_c4) {
    CsrMatrix cross = wendland_gram_csr(points, interp.nodes, interp.kernel.eps());
    for (std::int64_t i = 0; i < q; ++i)
      for (std::int64_t k = cross.row_ptr[i]; k < cross.row_ptr[i + 1]; ++k)
        for (std::int64_t c = 0; c < du; ++c)
          out.at(i, c) += cross.val[k] * interp.coeffs.at(cross.col[k], c);
    return out;
  }
  const std::int64_t n = interp.nodes.shape[0];
  const std::int64_t d = interp.nodes.shape[1];
  const double eps = interp.kernel.eps();
  for (std::int64_t i = 0; i < q; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::int64_t a = 0; a < d; ++a) {
        const double diff = points.at(i, a) - interp.nodes.at(j, a);
        s += diff * diff;
      }
      const double v = radial_profile(interp.kernel.kind, eps * std::sqrt(s));
      for (std::int64_t c = 0; c < du; ++c) out.at(i, c) += v * interp.coeffs.at(j, c);
    }
  return out;
}

}  // namespace kno
