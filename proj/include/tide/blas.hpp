#pragma once

#include <cstddef>

extern "C" {
// Row-major GEMM from OpenBLAS; declared directly to avoid dragging the full
// cblas header into every translation unit.
void cblas_dgemm(int order, int transA, int transB, int m, int n, int k, double alpha,
                 const double* A, int lda, const double* B, int ldb, double beta, double* C,
                 int ldc);
void openblas_set_num_threads(int n);
}

namespace tide {

enum : int { kRowMajor = 101, kNoTrans = 111, kTrans = 112 };

inline void blas_init_once() {
  static const bool done = [] {
    // GEMMs here are small; batch-level parallelism comes from OpenMP.
    openblas_set_num_threads(1);
    return true;
  }();
  (void)done;
}

// C[m,n] = alpha * op(A) * op(B) + beta * C
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a,
                 int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  blas_init_once();
  cblas_dgemm(kRowMajor, trans_a ? kTrans : kNoTrans, trans_b ? kTrans : kNoTrans, m, n, k, alpha,
              a, lda, b, ldb, beta, c, ldc);
}

}  // namespace tide
