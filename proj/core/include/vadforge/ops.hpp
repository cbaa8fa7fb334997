#pragma once

#include <cstddef>
#include <vector>

#include "vadforge/rng.hpp"
#include "vadforge/tensor.hpp"

/// Differentiable kernels. Each one computes its output eagerly and, when a
/// tape is active and some input requires grad, records a backward rule.
namespace vadforge::ops {

// Linear algebra ------------------------------------------------------------

/// [m,k] x [k,n] -> [m,n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// [B,m,k] x [B,k,n] -> [B,m,n]; with transpose_b the right operand is [B,n,k].
template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

/// y = x W^T + b over the last axis. weight is [out,in]; bias [out] may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// Convolutional stack --------------------------------------------------------

/// 3x3 cross-correlation (no kernel flip). x is [N,Cin,H,W] or [Cin,H,W];
/// kernel [Cout,Cin,3,3]; bias [Cout] may be undefined. pad_same zero-pads by
/// one so the spatial size is preserved.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 bool pad_same = true);

struct PoolSize {
  std::size_t height = 2;
  std::size_t width = 1;
};

/// Non-overlapping max pooling over the two trailing axes. Ties go to the
/// lowest flat index, which keeps the backward pass deterministic.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, PoolSize pool = {});

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

/// Per-channel normalization of [N,C,H,W] (or [C,H,W]). Training mode uses
/// batch statistics and updates the running estimates (unbiased variance);
/// eval mode uses the running estimates.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormStats<T>& stats, bool training);

/// max(x,0) + a_c * min(x,0) with one slope per channel. The channel axis is
/// rank-3 (C in [...,C,H,W]).
template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope);

// Sequence layers --------------------------------------------------------------

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    double eps = 1e-5);

/// Softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

/// Inverted dropout; identity when !training or p == 0. p must be in [0,1).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

// Elementwise and shape plumbing --------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// out.shape[i] = x.shape[axes[i]].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);

// Losses ----------------------------------------------------------------------------

/// Mean binary cross-entropy on logits, evaluated as
/// max(z,0) - z*y + log(1 + exp(-|z|)) so it stays finite for any z.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets);

}  // namespace vadforge::ops
