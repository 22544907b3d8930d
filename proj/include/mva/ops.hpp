#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mva/rng.hpp"
#include "mva/tensor.hpp"

// Differentiable kernels. Forward functions are pure; backward functions
// accumulate (+=) into caller-provided gradient buffers so parameter
// gradients can be summed across segments.
//
// OpenMP loops always assign each output element to exactly one thread and
// keep a fixed accumulation order inside it, so results are identical for
// any worker count. Reductions accumulate in double and store in T.

namespace mva {

// ---------------------------------------------------------------------------
// matmul: c[MxN] = a[MxK] * b[KxN]
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  if (a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
  const int64_t rows = a.extent(0), inner = a.extent(1), cols = b.extent(1);
  Tensor<T> c({rows, cols});
#pragma omp parallel for schedule(static) if (rows * inner * cols > 16384)
  for (int64_t i = 0; i < rows; ++i) {
    std::vector<double> acc(static_cast<size_t>(cols), 0.0);
    const T* arow = &a.data[static_cast<size_t>(i * inner)];
    for (int64_t k = 0; k < inner; ++k) {
      const double aik = static_cast<double>(arow[k]);
      const T* brow = &b.data[static_cast<size_t>(k * cols)];
      for (int64_t j = 0; j < cols; ++j) acc[static_cast<size_t>(j)] += aik * static_cast<double>(brow[j]);
    }
    T* crow = &c.data[static_cast<size_t>(i * cols)];
    for (int64_t j = 0; j < cols; ++j) crow[j] = static_cast<T>(acc[static_cast<size_t>(j)]);
  }
  return c;
}

// Accumulates d(sum(grad_c . c))/da into grad_a and likewise for grad_b.
template <typename T>
void matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& grad_c,
                     std::vector<T>* grad_a, std::vector<T>* grad_b) {
  const int64_t rows = a.extent(0), inner = a.extent(1), cols = b.extent(1);
  if (grad_a) {
    // ga = gc * b^T : dot of contiguous rows.
#pragma omp parallel for schedule(static) if (rows * inner * cols > 16384)
    for (int64_t i = 0; i < rows; ++i) {
      const T* gcrow = &grad_c.data[static_cast<size_t>(i * cols)];
      for (int64_t k = 0; k < inner; ++k) {
        const T* brow = &b.data[static_cast<size_t>(k * cols)];
        double acc = 0.0;
        for (int64_t j = 0; j < cols; ++j) acc += static_cast<double>(gcrow[j]) * static_cast<double>(brow[j]);
        (*grad_a)[static_cast<size_t>(i * inner + k)] += static_cast<T>(acc);
      }
    }
  }
  if (grad_b) {
    // gb = a^T * gc : each k-row of gb owned by one thread.
#pragma omp parallel for schedule(static) if (rows * inner * cols > 16384)
    for (int64_t k = 0; k < inner; ++k) {
      std::vector<double> acc(static_cast<size_t>(cols), 0.0);
      for (int64_t i = 0; i < rows; ++i) {
        const double aik = static_cast<double>(a.data[static_cast<size_t>(i * inner + k)]);
        const T* gcrow = &grad_c.data[static_cast<size_t>(i * cols)];
        for (int64_t j = 0; j < cols; ++j) acc[static_cast<size_t>(j)] += aik * static_cast<double>(gcrow[j]);
      }
      T* gbrow = &(*grad_b)[static_cast<size_t>(k * cols)];
      for (int64_t j = 0; j < cols; ++j) gbrow[j] += static_cast<T>(acc[static_cast<size_t>(j)]);
    }
  }
}

// ---------------------------------------------------------------------------
// conv1d_causal: x[C_in x T], kernel[C_out x C_in x K] -> y[C_out x T]
//
// y[co,t] = bias[co] + sum_{ci,k} kernel[co,ci,k] * x[ci, t-(K-1-k)*dilation]
// with zero left-padding, so output at t depends only on inputs at <= t.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv1d_causal(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                        int64_t dilation) {
  check_rank(x, 2, "conv1d_causal");
  check_rank(kernel, 3, "conv1d_causal");
  if (x.extent(1) < 1) throw Error("conv1d_causal: empty input (T = 0)");
  if (kernel.extent(2) < 1 || dilation < 1) {
    throw ConfigError("conv1d_causal: kernel size and dilation must be >= 1");
  }
  if (kernel.extent(1) != x.extent(0)) {
    throw ShapeError("conv1d_causal: input channels disagree: x " + shape_str(x.shape) +
                     " vs kernel " + shape_str(kernel.shape));
  }
  if (bias.numel() != kernel.extent(0)) {
    throw ShapeError("conv1d_causal: bias " + shape_str(bias.shape) + " vs kernel " +
                     shape_str(kernel.shape));
  }
  const int64_t c_in = x.extent(0), t_len = x.extent(1);
  const int64_t c_out = kernel.extent(0), k_len = kernel.extent(2);
  Tensor<T> y({c_out, t_len});
#pragma omp parallel for schedule(static) if (c_out * c_in * k_len * t_len > 16384)
  for (int64_t co = 0; co < c_out; ++co) {
    std::vector<double> acc(static_cast<size_t>(t_len), static_cast<double>(bias.data[static_cast<size_t>(co)]));
    for (int64_t ci = 0; ci < c_in; ++ci) {
      const T* xrow = &x.data[static_cast<size_t>(ci * t_len)];
      for (int64_t k = 0; k < k_len; ++k) {
        const double w = static_cast<double>(kernel(co, ci, k));
        if (w == 0.0) continue;
        const int64_t off = (k_len - 1 - k) * dilation;
        for (int64_t t = off; t < t_len; ++t) acc[static_cast<size_t>(t)] += w * static_cast<double>(xrow[t - off]);
      }
    }
    T* yrow = &y.data[static_cast<size_t>(co * t_len)];
    for (int64_t t = 0; t < t_len; ++t) yrow[t] = static_cast<T>(acc[static_cast<size_t>(t)]);
  }
  return y;
}

template <typename T>
void conv1d_causal_backward(const Tensor<T>& x, const Tensor<T>& kernel, int64_t dilation,
                            const Tensor<T>& grad_y, std::vector<T>* grad_x,
                            std::vector<T>* grad_kernel, std::vector<T>* grad_bias) {
  const int64_t c_in = x.extent(0), t_len = x.extent(1);
  const int64_t c_out = kernel.extent(0), k_len = kernel.extent(2);
  if (grad_x) {
#pragma omp parallel for schedule(static) if (c_out * c_in * k_len * t_len > 16384)
    for (int64_t ci = 0; ci < c_in; ++ci) {
      std::vector<double> acc(static_cast<size_t>(t_len), 0.0);
      for (int64_t co = 0; co < c_out; ++co) {
        const T* gyrow = &grad_y.data[static_cast<size_t>(co * t_len)];
        for (int64_t k = 0; k < k_len; ++k) {
          const double w = static_cast<double>(kernel(co, ci, k));
          if (w == 0.0) continue;
          const int64_t off = (k_len - 1 - k) * dilation;
          for (int64_t t = off; t < t_len; ++t) acc[static_cast<size_t>(t - off)] += w * static_cast<double>(gyrow[t]);
        }
      }
      T* gxrow = &(*grad_x)[static_cast<size_t>(ci * t_len)];
      for (int64_t t = 0; t < t_len; ++t) gxrow[t] += static_cast<T>(acc[static_cast<size_t>(t)]);
    }
  }
  if (grad_kernel) {
#pragma omp parallel for schedule(static) if (c_out * c_in * k_len * t_len > 16384)
    for (int64_t co = 0; co < c_out; ++co) {
      const T* gyrow = &grad_y.data[static_cast<size_t>(co * t_len)];
      for (int64_t ci = 0; ci < c_in; ++ci) {
        const T* xrow = &x.data[static_cast<size_t>(ci * t_len)];
        for (int64_t k = 0; k < k_len; ++k) {
          const int64_t off = (k_len - 1 - k) * dilation;
          double acc = 0.0;
          for (int64_t t = off; t < t_len; ++t) acc += static_cast<double>(gyrow[t]) * static_cast<double>(xrow[t - off]);
          (*grad_kernel)[static_cast<size_t>((co * c_in + ci) * k_len + k)] += static_cast<T>(acc);
        }
      }
    }
  }
  if (grad_bias) {
#pragma omp parallel for schedule(static) if (c_out * t_len > 16384)
    for (int64_t co = 0; co < c_out; ++co) {
      const T* gyrow = &grad_y.data[static_cast<size_t>(co * t_len)];
      double acc = 0.0;
      for (int64_t t = 0; t < t_len; ++t) acc += static_cast<double>(gyrow[t]);
      (*grad_bias)[static_cast<size_t>(co)] += static_cast<T>(acc);
    }
  }
}

// ---------------------------------------------------------------------------
// Depthwise causal conv (dilation 1): x[T x C], weight[C x K] -> y[T x C]
// The local mixer inside the Mamba block.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv1d_depthwise_causal(const Tensor<T>& x, const Tensor<T>& weight,
                                  const Tensor<T>& bias) {
  check_rank(x, 2, "conv1d_depthwise_causal");
  check_rank(weight, 2, "conv1d_depthwise_causal");
  const int64_t t_len = x.extent(0), channels = x.extent(1), k_len = weight.extent(1);
  if (weight.extent(0) != channels || bias.numel() != channels) {
    throw ShapeError("conv1d_depthwise_causal: x " + shape_str(x.shape) + " vs weight " +
                     shape_str(weight.shape));
  }
  Tensor<T> y({t_len, channels});
#pragma omp parallel for schedule(static) if (t_len * channels * k_len > 16384)
  for (int64_t t = 0; t < t_len; ++t) {
    T* yrow = &y.data[static_cast<size_t>(t * channels)];
    for (int64_t c = 0; c < channels; ++c) {
      double acc = static_cast<double>(bias.data[static_cast<size_t>(c)]);
      for (int64_t k = 0; k < k_len; ++k) {
        const int64_t src = t - (k_len - 1 - k);
        if (src < 0) continue;
        acc += static_cast<double>(weight(c, k)) * static_cast<double>(x(src, c));
      }
      yrow[c] = static_cast<T>(acc);
    }
  }
  return y;
}

template <typename T>
void conv1d_depthwise_causal_backward(const Tensor<T>& x, const Tensor<T>& weight,
                                      const Tensor<T>& grad_y, std::vector<T>* grad_x,
                                      std::vector<T>* grad_weight, std::vector<T>* grad_bias) {
  const int64_t t_len = x.extent(0), channels = x.extent(1), k_len = weight.extent(1);
  if (grad_x) {
#pragma omp parallel for schedule(static) if (t_len * channels * k_len > 16384)
    for (int64_t t = 0; t < t_len; ++t) {
      T* gxrow = &(*grad_x)[static_cast<size_t>(t * channels)];
      for (int64_t c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int64_t k = 0; k < k_len; ++k) {
          const int64_t dst = t + (k_len - 1 - k);
          if (dst >= t_len) continue;
          acc += static_cast<double>(weight(c, k)) * static_cast<double>(grad_y(dst, c));
        }
        gxrow[c] += static_cast<T>(acc);
      }
    }
  }
  if (grad_weight || grad_bias) {
#pragma omp parallel for schedule(static) if (t_len * channels * k_len > 16384)
    for (int64_t c = 0; c < channels; ++c) {
      if (grad_weight) {
        for (int64_t k = 0; k < k_len; ++k) {
          const int64_t off = k_len - 1 - k;
          double acc = 0.0;
          for (int64_t t = off; t < t_len; ++t) acc += static_cast<double>(grad_y(t, c)) * static_cast<double>(x(t - off, c));
          (*grad_weight)[static_cast<size_t>(c * k_len + k)] += static_cast<T>(acc);
        }
      }
      if (grad_bias) {
        double acc = 0.0;
        for (int64_t t = 0; t < t_len; ++t) acc += static_cast<double>(grad_y(t, c));
        (*grad_bias)[static_cast<size_t>(c)] += static_cast<T>(acc);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// layer_norm over the last dimension of x[T x D] (T may be 1).
// Population mean/variance per row, computed in double.
// ---------------------------------------------------------------------------

template <typename T>
struct LayerNormCtx {
  Tensor<T> xhat;            // normalized input, [T x D]
  std::vector<double> inv;   // 1/sqrt(var+eps) per row
};

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps, LayerNormCtx<T>* ctx = nullptr) {
  check_rank(x, 2, "layer_norm");
  const int64_t rows = x.extent(0), dim = x.extent(1);
  if (dim < 1) throw ShapeError("layer_norm: empty feature dimension in " + shape_str(x.shape));
  if (eps <= 0) throw ConfigError("layer_norm: eps must be > 0");
  if (gamma.numel() != dim || beta.numel() != dim) {
    throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape) + " / beta " +
                     shape_str(beta.shape) + " vs x " + shape_str(x.shape));
  }
  Tensor<T> y({rows, dim});
  if (ctx) {
    ctx->xhat = Tensor<T>({rows, dim});
    ctx->inv.assign(static_cast<size_t>(rows), 0.0);
  }
#pragma omp parallel for schedule(static) if (rows * dim > 16384)
  for (int64_t i = 0; i < rows; ++i) {
    const T* xrow = &x.data[static_cast<size_t>(i * dim)];
    double mean = 0.0;
    for (int64_t j = 0; j < dim; ++j) mean += static_cast<double>(xrow[j]);
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (int64_t j = 0; j < dim; ++j) {
      const double d = static_cast<double>(xrow[j]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(dim);
    const double inv = 1.0 / std::sqrt(var + eps);
    T* yrow = &y.data[static_cast<size_t>(i * dim)];
    for (int64_t j = 0; j < dim; ++j) {
      const double xhat = (static_cast<double>(xrow[j]) - mean) * inv;
      if (ctx) ctx->xhat(i, j) = static_cast<T>(xhat);
      yrow[j] = static_cast<T>(xhat * static_cast<double>(gamma.data[static_cast<size_t>(j)]) +
                               static_cast<double>(beta.data[static_cast<size_t>(j)]));
    }
    if (ctx) ctx->inv[static_cast<size_t>(i)] = inv;
  }
  return y;
}

template <typename T>
void layer_norm_backward(const LayerNormCtx<T>& ctx, const Tensor<T>& gamma,
                         const Tensor<T>& grad_y, std::vector<T>* grad_x,
                         std::vector<T>* grad_gamma, std::vector<T>* grad_beta) {
  const int64_t rows = ctx.xhat.extent(0), dim = ctx.xhat.extent(1);
  if (grad_x) {
#pragma omp parallel for schedule(static) if (rows * dim > 16384)
    for (int64_t i = 0; i < rows; ++i) {
      // gxhat = gy * gamma; gx = inv*(gxhat - mean(gxhat) - xhat*mean(gxhat .* xhat))
      double sum_g = 0.0, sum_gx = 0.0;
      for (int64_t j = 0; j < dim; ++j) {
        const double g = static_cast<double>(grad_y(i, j)) * static_cast<double>(gamma.data[static_cast<size_t>(j)]);
        sum_g += g;
        sum_gx += g * static_cast<double>(ctx.xhat(i, j));
      }
      const double mean_g = sum_g / static_cast<double>(dim);
      const double mean_gx = sum_gx / static_cast<double>(dim);
      const double inv = ctx.inv[static_cast<size_t>(i)];
      T* gxrow = &(*grad_x)[static_cast<size_t>(i * dim)];
      for (int64_t j = 0; j < dim; ++j) {
        const double g = static_cast<double>(grad_y(i, j)) * static_cast<double>(gamma.data[static_cast<size_t>(j)]);
        gxrow[j] += static_cast<T>(inv * (g - mean_g - static_cast<double>(ctx.xhat(i, j)) * mean_gx));
      }
    }
  }
  if (grad_gamma || grad_beta) {
#pragma omp parallel for schedule(static) if (rows * dim > 16384)
    for (int64_t j = 0; j < dim; ++j) {
      double gg = 0.0, gb = 0.0;
      for (int64_t i = 0; i < rows; ++i) {
        const double g = static_cast<double>(grad_y(i, j));
        gg += g * static_cast<double>(ctx.xhat(i, j));
        gb += g;
      }
      if (grad_gamma) (*grad_gamma)[static_cast<size_t>(j)] += static_cast<T>(gg);
      if (grad_beta) (*grad_beta)[static_cast<size_t>(j)] += static_cast<T>(gb);
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise activations. Scalar forms + tensor maps. All finite for
// finite inputs (softplus uses the overflow-safe branch).
// ---------------------------------------------------------------------------

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T silu_scalar(T x) {
  return x * sigmoid_scalar(x);
}

template <typename T>
T silu_grad_scalar(T x) {
  const T s = sigmoid_scalar(x);
  return s * (T(1) + x * (T(1) - s));
}

template <typename T>
T softplus_scalar(T x) {
  // max(x,0) + log1p(exp(-|x|)) never overflows.
  const T ax = x < T(0) ? -x : x;
  return (x > T(0) ? x : T(0)) + std::log1p(std::exp(-ax));
}

template <typename T>
T softplus_grad_scalar(T x) {
  return sigmoid_scalar(x);
}

template <typename T>
T tanh_grad_from_output(T y) {
  return T(1) - y * y;
}

enum class Act { Silu, Softplus, Tanh, Relu };

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Act act) {
  Tensor<T> y(x.shape);
  const int64_t n = x.numel();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) {
    const T v = x.data[static_cast<size_t>(i)];
    T r;
    switch (act) {
      case Act::Silu: r = silu_scalar(v); break;
      case Act::Softplus: r = softplus_scalar(v); break;
      case Act::Tanh: r = std::tanh(v); break;
      default: r = v > T(0) ? v : T(0); break;
    }
    y.data[static_cast<size_t>(i)] = r;
  }
  return y;
}

// grad_x += grad_y .* act'(x)
template <typename T>
void activate_backward(const Tensor<T>& x, const Tensor<T>& grad_y, Act act,
                       std::vector<T>* grad_x) {
  const int64_t n = x.numel();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) {
    const T v = x.data[static_cast<size_t>(i)];
    T d;
    switch (act) {
      case Act::Silu: d = silu_grad_scalar(v); break;
      case Act::Softplus: d = softplus_grad_scalar(v); break;
      case Act::Tanh: {
        const T th = std::tanh(v);
        d = T(1) - th * th;
        break;
      }
      default: d = v > T(0) ? T(1) : T(0); break;
    }
    (*grad_x)[static_cast<size_t>(i)] += grad_y.data[static_cast<size_t>(i)] * d;
  }
}

// ---------------------------------------------------------------------------
// dropout. Training: zero with probability rate, scale survivors by
// 1/(1-rate). Evaluation: identity. The mask is drawn serially from the
// provided stream so runs are reproducible; the multiply is parallel.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng,
                  std::vector<uint8_t>* mask_out = nullptr) {
  if (rate >= 1.0 || rate < 0.0) {
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  const int64_t n = x.numel();
  if (!training || rate == 0.0) {
    if (mask_out) mask_out->assign(static_cast<size_t>(n), 1);
    return x;
  }
  std::vector<uint8_t> mask(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) mask[static_cast<size_t>(i)] = rng.uniform() >= rate ? 1 : 0;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> y(x.shape);
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) {
    y.data[static_cast<size_t>(i)] = mask[static_cast<size_t>(i)] ? x.data[static_cast<size_t>(i)] * scale : T(0);
  }
  if (mask_out) *mask_out = std::move(mask);
  return y;
}

template <typename T>
void dropout_backward(const std::vector<uint8_t>& mask, double rate, const Tensor<T>& grad_y,
                      std::vector<T>* grad_x) {
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  const int64_t n = grad_y.numel();
#pragma omp parallel for schedule(static) if (n > 16384)
  for (int64_t i = 0; i < n; ++i) {
    if (mask[static_cast<size_t>(i)]) (*grad_x)[static_cast<size_t>(i)] += grad_y.data[static_cast<size_t>(i)] * scale;
  }
}

}  // namespace mva
