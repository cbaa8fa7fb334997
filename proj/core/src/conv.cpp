#include <algorithm>
#include <cmath>

#include "autograd.hpp"
#include "gemm.hpp"
#include "vadforge/ops.hpp"
#include "vadforge/parallel.hpp"

namespace vadforge::ops {

using detail::dimension_error;
using detail::gemm;
using detail::record;
using detail::should_record;
using detail::wants_grad;

namespace {

constexpr std::size_t kKernel = 3;
// Output positions per im2col block; bounds the scratch buffer for long inputs.
constexpr std::size_t kColumnsPerBlock = 8192;

struct Dims4 {
  std::size_t n, c, h, w;
};

Dims4 as_nchw(const Shape& s, const char* op) {
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  dimension_error(op, "expected [N,C,H,W] or [C,H,W], got " + shape_str(s));
}

struct ConvGeometry {
  std::size_t cin, h, w, pad, oh, ow;
};

// Fills col[(ci*9 + ky*3 + kx), (oy - y0)*ow + ox] for output rows [y0, y1).
template <typename T>
void im2col(const T* x, const ConvGeometry& g, std::size_t y0, std::size_t y1, T* col) {
  const std::size_t cols = (y1 - y0) * g.ow;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    const T* xc = x + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        T* row = col + ((ci * kKernel + ky) * kKernel + kx) * cols;
        for (std::size_t oy = y0; oy < y1; ++oy) {
          T* dst = row + (oy - y0) * g.ow;
          const long iy = long(oy + ky) - long(g.pad);
          if (iy < 0 || iy >= long(g.h)) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = xc + std::size_t(iy) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = long(ox + kx) - long(g.pad);
            dst[ox] = (ix < 0 || ix >= long(g.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, std::size_t y0, std::size_t y1, T* dx) {
  const std::size_t cols = (y1 - y0) * g.ow;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    T* xc = dx + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        const T* row = col + ((ci * kKernel + ky) * kKernel + kx) * cols;
        for (std::size_t oy = y0; oy < y1; ++oy) {
          const long iy = long(oy + ky) - long(g.pad);
          if (iy < 0 || iy >= long(g.h)) continue;
          const T* src = row + (oy - y0) * g.ow;
          T* dst = xc + std::size_t(iy) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = long(ox + kx) - long(g.pad);
            if (ix >= 0 && ix < long(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 bool pad_same) {
  const Dims4 d = as_nchw(x.shape(), "conv2d");
  if (kernel.rank() != 4 || kernel.dim(2) != kKernel || kernel.dim(3) != kKernel) {
    dimension_error("conv2d", "kernel must be [Cout,Cin,3,3], got " + shape_str(kernel.shape()));
  }
  if (kernel.dim(1) != d.c) {
    dimension_error("conv2d", "input has " + std::to_string(d.c) + " channels " +
                                  shape_str(x.shape()) + " but kernel expects " +
                                  std::to_string(kernel.dim(1)) + " " +
                                  shape_str(kernel.shape()));
  }
  const std::size_t cout = kernel.dim(0);
  if (bias.defined() && bias.numel() != cout) {
    dimension_error("conv2d", "bias " + shape_str(bias.shape()) + " vs " +
                                  std::to_string(cout) + " output channels");
  }
  const std::size_t pad = pad_same ? 1 : 0;
  if (!pad_same && (d.h < kKernel || d.w < kKernel)) {
    dimension_error("conv2d", "input " + shape_str(x.shape()) + " smaller than the kernel");
  }
  const ConvGeometry g{d.c, d.h, d.w, pad, d.h + 2 * pad - 2, d.w + 2 * pad - 2};
  const std::size_t patch = d.c * kKernel * kKernel;
  const std::size_t rows_per_block = std::max<std::size_t>(1, kColumnsPerBlock / g.ow);
  const std::size_t blocks_per_image = (g.oh + rows_per_block - 1) / rows_per_block;

  Shape out_shape = x.rank() == 4 ? Shape{d.n, cout, g.oh, g.ow} : Shape{cout, g.oh, g.ow};
  Tensor<T> out(out_shape);
  const T* xp = x.data().data();
  const T* kp = kernel.data().data();
  T* yp = out.data().data();
  const std::size_t in_image = d.c * d.h * d.w;
  const std::size_t out_plane = g.oh * g.ow;

  parallel_for(d.n * blocks_per_image, [&](std::size_t task) {
    const std::size_t n = task / blocks_per_image;
    const std::size_t y0 = (task % blocks_per_image) * rows_per_block;
    const std::size_t y1 = std::min(g.oh, y0 + rows_per_block);
    const std::size_t cols = (y1 - y0) * g.ow;
    std::vector<T> col(patch * cols);
    im2col(xp + n * in_image, g, y0, y1, col.data());
    T* yblk = yp + n * cout * out_plane + y0 * g.ow;
    gemm<T>(false, false, cout, cols, patch, T(1), kp, patch, col.data(), cols, T(0), yblk,
            out_plane);
    if (bias.defined()) {
      const T* bp = bias.data().data();
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t j = 0; j < cols; ++j) yblk[co * out_plane + j] += bp[co];
    }
  });

  if (should_record<T>({&x, &kernel, &bias})) {
    record(out, [x, kernel, bias, d, g, cout, patch, rows_per_block, blocks_per_image, in_image,
                 out_plane](const Tensor<T>& o) mutable {
      const T* gy = o.grad().data();
      const T* xd = x.data().data();
      const T* kd = kernel.data().data();
      const bool need_x = wants_grad(x);
      const bool need_k = wants_grad(kernel);
      T* gx = need_x ? x.ensure_grad().data() : nullptr;
      // One partial kernel gradient per image, summed in image order below.
      std::vector<T> partial_k(need_k ? d.n * cout * patch : 0, T(0));
      parallel_for(d.n, [&](std::size_t n) {
        std::vector<T> col;
        std::vector<T> dcol;
        for (std::size_t b = 0; b < blocks_per_image; ++b) {
          const std::size_t y0 = b * rows_per_block;
          const std::size_t y1 = std::min(g.oh, y0 + rows_per_block);
          const std::size_t cols = (y1 - y0) * g.ow;
          const T* gblk = gy + n * cout * out_plane + y0 * g.ow;
          if (need_k) {
            col.resize(patch * cols);
            im2col(xd + n * in_image, g, y0, y1, col.data());
            gemm<T>(false, true, cout, patch, cols, T(1), gblk, out_plane, col.data(), cols, T(1),
                    partial_k.data() + n * cout * patch, patch);
          }
          if (need_x) {
            dcol.resize(patch * cols);
            gemm<T>(true, false, patch, cols, cout, T(1), kd, patch, gblk, out_plane, T(0),
                    dcol.data(), cols);
            col2im_add(dcol.data(), g, y0, y1, gx + n * in_image);
          }
        }
      });
      if (need_k) {
        T* gk = kernel.ensure_grad().data();
        for (std::size_t n = 0; n < d.n; ++n)
          for (std::size_t i = 0; i < cout * patch; ++i) gk[i] += partial_k[n * cout * patch + i];
      }
      if (wants_grad(bias)) {
        auto gb = bias.ensure_grad();
        for (std::size_t n = 0; n < d.n; ++n)
          for (std::size_t co = 0; co < cout; ++co) {
            const T* p = gy + (n * cout + co) * out_plane;
            T s = 0;
            for (std::size_t j = 0; j < out_plane; ++j) s += p[j];
            gb[co] += s;
          }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, PoolSize pool) {
  if (x.rank() < 2) dimension_error("maxpool2d", "needs at least two axes");
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  if (pool.height == 0 || pool.width == 0 || h % pool.height != 0 || w % pool.width != 0) {
    dimension_error("maxpool2d", "input " + shape_str(x.shape()) + " not divisible by pool [" +
                                     std::to_string(pool.height) + "," +
                                     std::to_string(pool.width) + "]");
  }
  const std::size_t planes = x.numel() / (h * w);
  const std::size_t oh = h / pool.height, ow = w / pool.width;
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  Tensor<T> out(out_shape);
  std::vector<std::uint32_t> argmax(out.numel());
  const T* xp = x.data().data();
  T* yp = out.data().data();
  parallel_for(planes, [&](std::size_t p) {
    const T* xplane = xp + p * h * w;
    if (pool.height == 2 && pool.width == 1) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const T* top = xplane + 2 * oy * w;
        const T* bottom = top + w;
        T* y = yp + p * oh * ow + oy * ow;
        std::uint32_t* am = argmax.data() + p * oh * ow + oy * ow;
        const auto base = static_cast<std::uint32_t>(2 * oy * w);
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const std::uint32_t lower = bottom[ox] > top[ox];
          y[ox] = std::max(top[ox], bottom[ox]);
          am[ox] = base + static_cast<std::uint32_t>(ox) + lower * static_cast<std::uint32_t>(w);
        }
      }
      return;
    }
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (oy * pool.height) * w + ox * pool.width;
        for (std::size_t dy = 0; dy < pool.height; ++dy)
          for (std::size_t dx = 0; dx < pool.width; ++dx) {
            const std::size_t idx = (oy * pool.height + dy) * w + ox * pool.width + dx;
            if (xplane[idx] > xplane[best]) best = idx;
          }
        const std::size_t o = p * oh * ow + oy * ow + ox;
        yp[o] = xplane[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
  });
  if (should_record<T>({&x})) {
    record(out, [x, argmax = std::move(argmax), h, w, oh, ow](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      T* gx = x.ensure_grad().data();
      const std::size_t per_plane = oh * ow;
      const std::size_t planes = argmax.size() / per_plane;
      for (std::size_t p = 0; p < planes; ++p) {
        T* gplane = gx + p * h * w;
        const std::uint32_t* am = argmax.data() + p * per_plane;
        const T* gp = g + p * per_plane;
        for (std::size_t i = 0; i < per_plane; ++i) gplane[am[i]] += gp[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormStats<T>& stats, bool training) {
  const Dims4 d = as_nchw(x.shape(), "batchnorm2d");
  if (gamma.numel() != d.c || beta.numel() != d.c || stats.running_mean.numel() != d.c ||
      stats.running_var.numel() != d.c) {
    dimension_error("batchnorm2d", "parameters do not match " + std::to_string(d.c) +
                                       " channels of " + shape_str(x.shape()));
  }
  const std::size_t plane = d.h * d.w;
  const std::size_t count = d.n * plane;
  std::vector<T> mean_c(d.c), inv_std(d.c);
  const T* xp = x.data().data();
  auto rm = stats.running_mean.data();
  auto rv = stats.running_var.data();
  if (training) {
    if (count < 2) dimension_error("batchnorm2d", "training needs more than one value per channel");
    parallel_for(d.c, [&](std::size_t c) {
      double s = 0.0;
      for (std::size_t n = 0; n < d.n; ++n) {
        const T* p = xp + (n * d.c + c) * plane;
        s += detail::block_sum<T>(plane, [&](std::size_t j) { return p[j]; });
      }
      const double mu = s / double(count);
      const T mu_t = T(mu);
      double v = 0.0;
      for (std::size_t n = 0; n < d.n; ++n) {
        const T* p = xp + (n * d.c + c) * plane;
        v += detail::block_sum<T>(plane, [&](std::size_t j) { return (p[j] - mu_t) * (p[j] - mu_t); });
      }
      const double var = v / double(count);
      mean_c[c] = T(mu);
      inv_std[c] = T(1.0 / std::sqrt(var + stats.eps));
      const double unbiased = v / double(count - 1);
      rm[c] = T((1.0 - stats.momentum) * rm[c] + stats.momentum * mu);
      rv[c] = T((1.0 - stats.momentum) * rv[c] + stats.momentum * unbiased);
    });
  } else {
    for (std::size_t c = 0; c < d.c; ++c) {
      mean_c[c] = rm[c];
      inv_std[c] = T(1.0 / std::sqrt(double(rv[c]) + stats.eps));
    }
  }
  Tensor<T> out(x.shape());
  T* yp = out.data().data();
  const T* gp = gamma.data().data();
  const T* bp = beta.data().data();
  parallel_for(d.n * d.c, [&](std::size_t nc) {
    const std::size_t c = nc % d.c;
    const T a = gp[c] * inv_std[c];
    const T b = bp[c] - a * mean_c[c];
    const T* p = xp + nc * plane;
    T* q = yp + nc * plane;
    for (std::size_t j = 0; j < plane; ++j) q[j] = a * p[j] + b;
  });
  if (should_record<T>({&x, &gamma, &beta})) {
    record(out, [x, gamma, beta, d, plane, count, training, mean_c = std::move(mean_c),
                 inv_std = std::move(inv_std)](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      const T* xd = x.data().data();
      const T* gd = gamma.data().data();
      std::vector<double> sum_g(d.c, 0.0), sum_gx(d.c, 0.0);
      parallel_for(d.c, [&](std::size_t c) {
        double sg = 0.0, sgx = 0.0;
        const T mu = mean_c[c];
        for (std::size_t n = 0; n < d.n; ++n) {
          const T* gp2 = g + (n * d.c + c) * plane;
          const T* xp2 = xd + (n * d.c + c) * plane;
          sg += detail::block_sum<T>(plane, [&](std::size_t j) { return gp2[j]; });
          sgx += detail::block_sum<T>(plane, [&](std::size_t j) { return gp2[j] * (xp2[j] - mu); });
        }
        sum_g[c] = sg;
        sum_gx[c] = sgx * double(inv_std[c]);
      });
      if (wants_grad(gamma)) {
        auto gg = gamma.ensure_grad();
        for (std::size_t c = 0; c < d.c; ++c) gg[c] += T(sum_gx[c]);
      }
      if (wants_grad(beta)) {
        auto gb = beta.ensure_grad();
        for (std::size_t c = 0; c < d.c; ++c) gb[c] += T(sum_g[c]);
      }
      if (wants_grad(x)) {
        T* gx = x.ensure_grad().data();
        parallel_for(d.n * d.c, [&](std::size_t nc) {
          const std::size_t c = nc % d.c;
          const double is = inv_std[c];
          const T* gp2 = g + nc * plane;
          const T* xp2 = xd + nc * plane;
          T* out_g = gx + nc * plane;
          if (training) {
            // dx = k * (count*g - sum_g - xhat*sum_gx), expanded to a*g + b*x + c0.
            const double k = double(gd[c]) * is / double(count);
            const T ca = T(k * double(count));
            const T cb = T(-k * is * sum_gx[c]);
            const T c0 = T(-k * sum_g[c] + k * is * sum_gx[c] * double(mean_c[c]));
            for (std::size_t j = 0; j < plane; ++j) out_g[j] += ca * gp2[j] + cb * xp2[j] + c0;
          } else {
            const T k = T(double(gd[c]) * is);
            for (std::size_t j = 0; j < plane; ++j) out_g[j] += k * gp2[j];
          }
        });
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope) {
  if (x.rank() < 3) dimension_error("prelu", "expected [...,C,H,W], got " + shape_str(x.shape()));
  const std::size_t c_axis = x.rank() - 3;
  const std::size_t channels = x.dim(c_axis);
  if (slope.numel() != channels) {
    dimension_error("prelu", "slope has " + std::to_string(slope.numel()) + " entries for " +
                                 std::to_string(channels) + " channels");
  }
  const std::size_t plane = x.dim(c_axis + 1) * x.dim(c_axis + 2);
  const std::size_t groups = x.numel() / plane;
  Tensor<T> out(x.shape());
  const T* xp = x.data().data();
  const T* ap = slope.data().data();
  T* yp = out.data().data();
  parallel_for(groups, [&](std::size_t gi) {
    const T a = ap[gi % channels];
    const T* p = xp + gi * plane;
    T* q = yp + gi * plane;
    for (std::size_t j = 0; j < plane; ++j) q[j] = std::max(p[j], T(0)) + a * std::min(p[j], T(0));
  });
  if (should_record<T>({&x, &slope})) {
    record(out, [x, slope, channels, plane, groups](const Tensor<T>& o) mutable {
      const T* g = o.grad().data();
      const T* xd = x.data().data();
      const T* ad = slope.data().data();
      T* gx = wants_grad(x) ? x.ensure_grad().data() : nullptr;
      std::vector<double> ga(groups, 0.0);
      parallel_for(groups, [&](std::size_t gi) {
        const T a = ad[gi % channels];
        const T* gp = g + gi * plane;
        const T* p = xd + gi * plane;
        if (gx) {
          T* q = gx + gi * plane;
          for (std::size_t j = 0; j < plane; ++j) {
            q[j] += gp[j] * (a + (T(1) - a) * detail::step(p[j]));
          }
        }
        ga[gi] = detail::block_sum<T>(plane, [&](std::size_t j) { return gp[j] * std::min(p[j], T(0)); });
      });
      if (wants_grad(slope)) {
        auto gs = slope.ensure_grad();
        for (std::size_t gi = 0; gi < groups; ++gi) gs[gi % channels] += T(ga[gi]);
      }
    });
  }
  return out;
}

#define VADFORGE_INSTANTIATE_CONV(T)                                                          \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, bool);     \
  template Tensor<T> maxpool2d(const Tensor<T>&, PoolSize);                                   \
  template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                 BatchNormStats<T>&, bool);                                   \
  template Tensor<T> prelu(const Tensor<T>&, const Tensor<T>&);

VADFORGE_INSTANTIATE_CONV(float)
VADFORGE_INSTANTIATE_CONV(double)

#undef VADFORGE_INSTANTIATE_CONV

}  // namespace vadforge::ops
