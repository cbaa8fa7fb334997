#include "gemm.hpp"

#include <Eigen/Core>
#include <algorithm>

#include "vadforge/parallel.hpp"

namespace vadforge::detail {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstView = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using View = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

constexpr std::size_t kRowBlock = 256;

template <typename T>
void gemm_block(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
                const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
                std::size_t ldc) {
  using Index = Eigen::Index;
  View<T> cm(c, Index(m), Index(n), Eigen::OuterStride<>(Index(ldc)));
  if (beta == T(0)) cm.setZero();
  // Stored shapes: A is (trans_a ? k x m : m x k), B is (trans_b ? n x k : k x n).
  ConstView<T> am(a, trans_a ? Index(k) : Index(m), trans_a ? Index(m) : Index(k),
                  Eigen::OuterStride<>(Index(lda)));
  ConstView<T> bm(b, trans_b ? Index(n) : Index(k), trans_b ? Index(k) : Index(n),
                  Eigen::OuterStride<>(Index(ldb)));
  if (!trans_a && !trans_b) cm.noalias() += alpha * am * bm;
  else if (!trans_a && trans_b) cm.noalias() += alpha * am * bm.transpose();
  else if (trans_a && !trans_b) cm.noalias() += alpha * am.transpose() * bm;
  else cm.noalias() += alpha * am.transpose() * bm.transpose();
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (beta == T(0))
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T(0));
    return;
  }
  const std::size_t blocks = (m + kRowBlock - 1) / kRowBlock;
  parallel_for(blocks, [&](std::size_t blk) {
    const std::size_t r0 = blk * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - r0);
    const T* a_blk = trans_a ? a + r0 : a + r0 * lda;
    gemm_block(trans_a, trans_b, rows, n, k, alpha, a_blk, lda, b, ldb, beta, c + r0 * ldc, ldc);
  });
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, float, const float*,
                          std::size_t, const float*, std::size_t, float, float*, std::size_t);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, double,
                           const double*, std::size_t, const double*, std::size_t, double, double*,
                           std::size_t);

}  // namespace vadforge::detail
