#pragma once

#include <cstddef>

namespace vadforge::detail {

/// Row-major C = alpha * op(A) * op(B) + beta * C where op(A) is m x k and
/// op(B) is k x n. beta must be 0 or 1. Large products are split into fixed
/// row blocks, so every output element is produced by the same arithmetic
/// regardless of thread count.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc);

}  // namespace vadforge::detail
