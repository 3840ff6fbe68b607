#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

// Small dense matrix kernels shared by the autodiff primitives and the
// model-level contraction ops. Row-major, accumulate into C. The public
// entry points tile the column axis so the streamed operand stays in cache
// when n is long (activations are stored as [C, M*N] slabs).

namespace kno::detail {

inline constexpr std::int64_t kGemmTile = 512;

// C[i, 0:n] += sum_k A[i,k] * B[k, 0:n], with row strides ldb/ldc.
inline void gemm_nn_block(const double* __restrict__ A, const double* __restrict__ B,
                          double* __restrict__ C, std::int64_t m, std::int64_t k, std::int64_t n,
                          std::int64_t lda, std::int64_t ldb, std::int64_t ldc) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* a = A + i * lda;
    double* c = C + i * ldc;
    std::int64_t kk = 0;
    for (; kk + 1 < k; kk += 2) {
      const double a0 = a[kk], a1 = a[kk + 1];
      const double* b0 = B + kk * ldb;
      const double* b1 = b0 + ldb;
      for (std::int64_t j = 0; j < n; ++j) c[j] += a0 * b0[j] + a1 * b1[j];
    }
    for (; kk < k; ++kk) {
      const double av = a[kk];
      const double* b = B + kk * ldb;
      for (std::int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[i,:] += sum_k A[k,i] * B[k,:] (A transposed), strided.
inline void gemm_tn_block(const double* __restrict__ A, const double* __restrict__ B,
                          double* __restrict__ C, std::int64_t m, std::int64_t k, std::int64_t n,
                          std::int64_t lda, std::int64_t ldb, std::int64_t ldc) {
  std::int64_t kk = 0;
  for (; kk + 1 < k; kk += 2) {
    const double* a0 = A + kk * lda;
    const double* a1 = a0 + lda;
    const double* b0 = B + kk * ldb;
    const double* b1 = b0 + ldb;
    for (std::int64_t i = 0; i < m; ++i) {
      const double av0 = a0[i], av1 = a1[i];
      double* c = C + i * ldc;
      for (std::int64_t j = 0; j < n; ++j) c[j] += av0 * b0[j] + av1 * b1[j];
    }
  }
  for (; kk < k; ++kk) {
    const double* a = A + kk * lda;
    const double* b = B + kk * ldb;
    for (std::int64_t i = 0; i < m; ++i) {
      const double av = a[i];
      double* c = C + i * ldc;
      for (std::int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[i,:] += sum_k A[i,k] * B[k,:]
inline void gemm_nn(const double* __restrict__ A, const double* __restrict__ B,
                    double* __restrict__ C, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t j0 = 0; j0 < n; j0 += kGemmTile) {
    const std::int64_t jn = std::min(kGemmTile, n - j0);
    gemm_nn_block(A, B + j0, C + j0, m, k, jn, k, n, n);
  }
}

// C[i,:] += sum_k A[k,i] * B[k,:]  (i.e. C += A^T * B)
inline void gemm_tn(const double* __restrict__ A, const double* __restrict__ B,
                    double* __restrict__ C, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t j0 = 0; j0 < n; j0 += kGemmTile) {
    const std::int64_t jn = std::min(kGemmTile, n - j0);
    gemm_tn_block(A, B + j0, C + j0, m, k, jn, m, n, n);
  }
}

// C[i,j] += dot(A[i,:], B[j,:])   (i.e. C += A * B^T). Dot-product loops are
// latency bound under strict FP, so each k-tile of B is transposed into a
// scratch slab and the update runs as an axpy kernel instead.
inline void gemm_nt(const double* __restrict__ A, const double* __restrict__ B,
                    double* __restrict__ C, std::int64_t m, std::int64_t k, std::int64_t n) {
  thread_local std::vector<double> bt;
  bt.resize(static_cast<std::size_t>(std::min(kGemmTile, k) * n));
  for (std::int64_t k0 = 0; k0 < k; k0 += kGemmTile) {
    const std::int64_t kn = std::min(kGemmTile, k - k0);
    for (std::int64_t j = 0; j < n; ++j) {
      const double* b = B + j * k + k0;
      for (std::int64_t kk = 0; kk < kn; ++kk) bt[static_cast<std::size_t>(kk * n + j)] = b[kk];
    }
    gemm_nn_block(A + k0, bt.data(), C, m, kn, n, k, n, n);
  }
}

}  // namespace kno::detail
