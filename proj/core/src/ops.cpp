#include "vadforge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "autograd.hpp"
#include "gemm.hpp"
#include "vadforge/parallel.hpp"

namespace vadforge::ops {

using detail::dimension_error;
using detail::gemm;
using detail::record;
using detail::should_record;
using detail::wants_grad;

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    dimension_error("matmul", "cannot multiply " + shape_str(a.shape()) + " by " +
                                  shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  gemm<T>(false, false, m, n, k, T(1), a.data().data(), k, b.data().data(), n, T(0),
          out.data().data(), n);
  if (should_record<T>({&a, &b})) {
    record(out, [a, b, m, n, k](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      if (wants_grad(a))
        gemm<T>(false, true, m, k, n, T(1), g, n, b.data().data(), n, T(1),
                a.ensure_grad().data(), k);
      if (wants_grad(b))
        gemm<T>(true, false, k, n, m, T(1), a.data().data(), k, g, n, T(1),
                b.ensure_grad().data(), n);
    });
  }
  return out;
}

template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != (transpose_b ? b.dim(2) : b.dim(1))) {
    dimension_error("batched_matmul", "cannot multiply " + shape_str(a.shape()) + " by " +
                                          shape_str(b.shape()) +
                                          (transpose_b ? " (transposed)" : ""));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  Tensor<T> out(Shape{batch, m, n});
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  T* op = out.data().data();
  parallel_for(batch, [&](std::size_t i) {
    gemm<T>(false, transpose_b, m, n, k, T(1), ap + i * m * k, k, bp + i * k * n,
            transpose_b ? k : n, T(0), op + i * m * n, n);
  });
  if (should_record<T>({&a, &b})) {
    record(out, [a, b, batch, m, n, k, transpose_b](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      const T* ad = a.data().data();
      const T* bd = b.data().data();
      T* ga = wants_grad(a) ? a.ensure_grad().data() : nullptr;
      T* gb = wants_grad(b) ? b.ensure_grad().data() : nullptr;
      parallel_for(batch, [&](std::size_t i) {
        const T* gi = g + i * m * n;
        const T* ai = ad + i * m * k;
        const T* bi = bd + i * k * n;
        if (ga) {
          if (transpose_b)
            gemm<T>(false, false, m, k, n, T(1), gi, n, bi, k, T(1), ga + i * m * k, k);
          else
            gemm<T>(false, true, m, k, n, T(1), gi, n, bi, n, T(1), ga + i * m * k, k);
        }
        if (gb) {
          if (transpose_b)
            gemm<T>(true, false, n, k, m, T(1), gi, n, ai, k, T(1), gb + i * k * n, k);
          else
            gemm<T>(true, false, k, n, m, T(1), ai, k, gi, n, T(1), gb + i * k * n, n);
        }
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() < 1 || weight.rank() != 2 || x.shape().back() != weight.dim(1)) {
    dimension_error("linear", "input " + shape_str(x.shape()) + " incompatible with weight " +
                                  shape_str(weight.shape()));
  }
  const std::size_t in = weight.dim(1), out_features = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_features)) {
    dimension_error("linear", "bias " + shape_str(bias.shape()) + " does not match weight " +
                                  shape_str(weight.shape()));
  }
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_features;
  Tensor<T> out(out_shape);
  T* y = out.data().data();
  gemm<T>(false, true, rows, out_features, in, T(1), x.data().data(), in,
          weight.data().data(), in, T(0), y, out_features);
  if (bias.defined()) {
    const T* bp = bias.data().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_features; ++j) y[r * out_features + j] += bp[j];
  }
  if (should_record<T>({&x, &weight, &bias})) {
    record(out, [x, weight, bias, rows, in, out_features](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      if (wants_grad(x))
        gemm<T>(false, false, rows, in, out_features, T(1), g, out_features,
                weight.data().data(), in, T(1), x.ensure_grad().data(), in);
      if (wants_grad(weight))
        gemm<T>(true, false, out_features, in, rows, T(1), g, out_features, x.data().data(), in,
                T(1), weight.ensure_grad().data(), in);
      if (wants_grad(bias)) {
        auto gb = bias.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < out_features; ++j) gb[j] += g[r * out_features + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    double eps) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    dimension_error("layernorm", "affine parameters do not match feature size " +
                                     std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  const T* xp = x.data().data();
  const T* gp = gamma.data().data();
  const T* bp = beta.data().data();
  T* yp = out.data().data();
  parallel_for(rows, [&](std::size_t r) {
    const T* xr = xp + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= double(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= double(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = T(is);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = T((xr[j] - mu) * is);
      xhat[r * d + j] = h;
      yp[r * d + j] = gp[j] * h + bp[j];
    }
  });
  if (should_record<T>({&x, &gamma, &beta})) {
    record(out, [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                 d](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      const T* gp = gamma.data().data();
      if (wants_grad(gamma) || wants_grad(beta)) {
        T* gg = wants_grad(gamma) ? gamma.ensure_grad().data() : nullptr;
        T* gb = wants_grad(beta) ? beta.ensure_grad().data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) {
            if (gg) gg[j] += g[r * d + j] * xhat[r * d + j];
            if (gb) gb[j] += g[r * d + j];
          }
      }
      if (wants_grad(x)) {
        T* gx = x.ensure_grad().data();
        parallel_for(rows, [&](std::size_t r) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = double(g[r * d + j]) * gp[j];
            s1 += gh;
            s2 += gh * xhat[r * d + j];
          }
          const double scale_r = double(inv_std[r]) / double(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = double(g[r * d + j]) * gp[j];
            gx[r * d + j] += T(scale_r * (double(d) * gh - s1 - xhat[r * d + j] * s2));
          }
        });
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() < 1) dimension_error("softmax", "needs at least one axis");
  const std::size_t d = x.shape().back();
  const std::size_t rows = d == 0 ? 0 : x.numel() / d;
  Tensor<T> out(x.shape());
  const T* xp = x.data().data();
  T* yp = out.data().data();
  parallel_for(rows, [&](std::size_t r) {
    const T* xr = xp + r * d;
    T* yr = yp + r * d;
    const T mx = *std::max_element(xr, xr + d);
    T total = 0;
    for (std::size_t j = 0; j < d; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    for (std::size_t j = 0; j < d; ++j) yr[j] /= total;
  });
  if (should_record<T>({&x})) {
    record(out, [x, rows, d](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      const T* y = o.data().data();
      T* gx = x.ensure_grad().data();
      parallel_for(rows, [&](std::size_t r) {
        T dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) {
    fail(ErrorCode::kParameter, "dropout probability must lie in [0,1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < p ? T(0) : keep_scale;
  Tensor<T> out(x.shape());
  const T* xp = x.data().data();
  T* yp = out.data().data();
  for (std::size_t i = 0; i < mask.size(); ++i) yp[i] = xp[i] * mask[i];
  if (should_record<T>({&x})) {
    record(out, [x, mask = std::move(mask)](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      T* gx = x.ensure_grad().data();
      for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += g[i] * mask[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* xp = x.data().data();
  T* yp = out.data().data();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T z = xp[i];
    if (z >= 0) {
      yp[i] = T(1) / (T(1) + std::exp(-z));
    } else {
      const T e = std::exp(z);
      yp[i] = e / (T(1) + e);
    }
  }
  if (should_record<T>({&x})) {
    record(out, [x](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      const T* y = o.data().data();
      T* gx = x.ensure_grad().data();
      for (std::size_t i = 0; i < o.numel(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* xp = x.data().data();
  T* yp = out.data().data();
  // Branch-free forms so the loops vectorize; signs of activations are random.
  for (std::size_t i = 0; i < x.numel(); ++i) yp[i] = std::max(xp[i], T(0));
  if (should_record<T>({&x})) {
    record(out, [x](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      const T* xd = x.data().data();
      T* gx = x.ensure_grad().data();
      for (std::size_t i = 0; i < o.numel(); ++i) gx[i] += g[i] * detail::step(xd[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    dimension_error("add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> out(a.shape());
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  T* yp = out.data().data();
  for (std::size_t i = 0; i < a.numel(); ++i) yp[i] = ap[i] + bp[i];
  if (should_record<T>({&a, &b})) {
    record(out, [a, b](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      if (wants_grad(a)) {
        T* ga = a.ensure_grad().data();
        for (std::size_t i = 0; i < o.numel(); ++i) ga[i] += g[i];
      }
      if (wants_grad(b)) {
        T* gb = b.ensure_grad().data();
        for (std::size_t i = 0; i < o.numel(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    dimension_error("mul", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> out(a.shape());
  const T* ap = a.data().data();
  const T* bp = b.data().data();
  T* yp = out.data().data();
  for (std::size_t i = 0; i < a.numel(); ++i) yp[i] = ap[i] * bp[i];
  if (should_record<T>({&a, &b})) {
    record(out, [a, b](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      const T* ad = a.data().data();
      const T* bd = b.data().data();
      if (wants_grad(a)) {
        T* ga = a.ensure_grad().data();
        for (std::size_t i = 0; i < o.numel(); ++i) ga[i] += g[i] * bd[i];
      }
      if (wants_grad(b)) {
        T* gb = b.ensure_grad().data();
        for (std::size_t i = 0; i < o.numel(); ++i) gb[i] += g[i] * ad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  const T* xp = x.data().data();
  T* yp = out.data().data();
  for (std::size_t i = 0; i < x.numel(); ++i) yp[i] = xp[i] * factor;
  if (should_record<T>({&x})) {
    record(out, [x, factor](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      T* gx = x.ensure_grad().data();
      for (std::size_t i = 0; i < o.numel(); ++i) gx[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double total = 0.0;
  for (T v : x.data()) total += v;
  Tensor<T> out(Shape{}, T(total));
  if (should_record<T>({&x})) {
    record(out, [x](const Tensor<T>& o) mutable {
      const T g = o.grad()[0];
      for (T& v : x.ensure_grad()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    dimension_error("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (should_record<T>({&x})) {
    record(out, [x](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      T* gx = x.ensure_grad().data();
      for (std::size_t i = 0; i < o.numel(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  std::vector<bool> seen(rank, false);
  if (axes.size() != rank) dimension_error("permute", "axis list does not match rank");
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) dimension_error("permute", "invalid axis permutation");
    seen[a] = true;
  }
  Shape out_shape(rank);
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.dim(axes[i]);
    src_stride[i] = in_strides[axes[i]];
  }
  Tensor<T> out(out_shape);
  const std::size_t n = x.numel();
  std::vector<std::size_t> source(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    source[i] = offset;
    for (std::size_t ax = rank; ax-- > 0;) {
      if (++counter[ax] < out_shape[ax]) {
        offset += src_stride[ax];
        break;
      }
      offset -= src_stride[ax] * (out_shape[ax] - 1);
      counter[ax] = 0;
    }
  }
  const T* xp = x.data().data();
  T* yp = out.data().data();
  for (std::size_t i = 0; i < n; ++i) yp[i] = xp[source[i]];
  if (should_record<T>({&x})) {
    record(out, [x, source = std::move(source)](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      T* gx = x.ensure_grad().data();
      for (std::size_t i = 0; i < source.size(); ++i) gx[source[i]] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  if (logits.numel() != targets.numel()) {
    dimension_error("bce_with_logits", "logits " + shape_str(logits.shape()) + " vs targets " +
                                           shape_str(targets.shape()));
  }
  const std::size_t n = logits.numel();
  if (n == 0) dimension_error("bce_with_logits", "empty input");
  const T* z = logits.data().data();
  const T* y = targets.data().data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double zi = z[i];
    total += std::max(zi, 0.0) - zi * y[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  Tensor<T> out(Shape{}, T(total / double(n)));
  if (should_record<T>({&logits})) {
    record(out, [logits, targets, n](const Tensor<T>& o) mutable {
      const T g = o.grad()[0] / T(n);
      const T* zd = logits.data().data();
      const T* yd = targets.data().data();
      T* gz = logits.ensure_grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        const T s = zd[i] >= 0 ? T(1) / (T(1) + std::exp(-zd[i]))
                               : std::exp(zd[i]) / (T(1) + std::exp(zd[i]));
        gz[i] += g * (s - yd[i]);
      }
    });
  }
  return out;
}

#define VADFORGE_INSTANTIATE_OPS(T)                                                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> batched_matmul(const Tensor<T>&, const Tensor<T>&, bool);            \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                               double);                                                   \
  template Tensor<T> softmax(const Tensor<T>&);                                           \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&, bool);                       \
  template Tensor<T> sigmoid(const Tensor<T>&);                                           \
  template Tensor<T> relu(const Tensor<T>&);                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> scale(const Tensor<T>&, T);                                          \
  template Tensor<T> sum(const Tensor<T>&);                                               \
  template Tensor<T> mean(const Tensor<T>&);                                              \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                    \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);          \
  template Tensor<T> bce_with_logits(const Tensor<T>&, const Tensor<T>&);

VADFORGE_INSTANTIATE_OPS(float)
VADFORGE_INSTANTIATE_OPS(double)

#undef VADFORGE_INSTANTIATE_OPS

}  // namespace vadforge::ops
