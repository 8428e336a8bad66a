#pragma once

#include <cstdint>
#include <vector>

namespace treefield::grad {

// Accumulating matrix kernels, C += op(A) * op(B). Plain loops ordered for
// unit-stride inner access; the compiler's vectorizer does the rest. The
// largest layer in the project is 1024x1024, so nothing fancier is needed.

// C[m x n] += A[m x k] * B[k x n]
template <typename S>
void gemm_nn(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const S av = arow[p];
      if (av == S(0)) continue;
      const S* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B^T, with B stored [n x k]. B is transposed into
// a scratch panel first: the naive per-(i,j) dot product is a serial
// dependency chain that strict FP forbids the compiler to reassociate,
// which costs ~7x throughput on the backward pass.
template <typename S>
void gemm_nt(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
  thread_local std::vector<S> scratch;
  scratch.resize(static_cast<size_t>(k) * n);
  S* bt = scratch.data();
  for (int64_t j = 0; j < n; ++j)
    for (int64_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt, c, m, k, n);
}

// C[m x n] += A^T * B, with A stored [k x m]
template <typename S>
void gemm_tn(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t p = 0; p < k; ++p) {
    const S* arow = a + p * m;
    const S* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const S av = arow[i];
      if (av == S(0)) continue;
      S* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace treefield::grad
