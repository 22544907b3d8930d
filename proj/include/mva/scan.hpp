#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "mva/tensor.hpp"

// The selective state-space recurrence. Per (channel, state) lane:
//
//   h_t = a_bar_t * h_{t-1} + bx_bar_t          (h_0 = 0)
//   y_t[c] = sum_n C_t[n] * h_t[c,n] + d_skip[c] * x_t[c]
//
// Two evaluations of the same contract: a sequential recurrence (the
// reference) and a work-efficient Blelloch prefix scan over the associative
// operator (a1,b1) o (a2,b2) = (a2*a1, a2*b1 + b2). Lanes are independent
// and run in parallel; within a lane the tree combination order is fixed,
// so results do not depend on the worker count.

namespace mva {

// Zero-order-hold discretization of a scalar (a, b) pair with step delta.
// a == 0 falls back to the limit b_bar = delta * b.
template <typename T>
std::pair<T, T> discretize(T delta, T a, T b) {
  const T a_bar = std::exp(delta * a);
  if (a == T(0)) return {a_bar, delta * b};
  const T b_bar = std::expm1(delta * a) / a * b;
  return {a_bar, b_bar};
}

namespace detail {

template <typename T>
void check_scan_shapes(const Tensor<T>& a_bar, const Tensor<T>& bx_bar, const Tensor<T>& c,
                       const Tensor<T>& d_skip, const Tensor<T>& x) {
  check_rank(a_bar, 3, "ssm_scan");
  check_same_shape(a_bar, bx_bar, "ssm_scan");
  const int64_t t_len = a_bar.extent(0), d_inner = a_bar.extent(1), n_state = a_bar.extent(2);
  if (c.rank() != 2 || c.extent(0) != t_len || c.extent(1) != n_state) {
    throw ShapeError("ssm_scan: c " + shape_str(c.shape) + " vs a_bar " + shape_str(a_bar.shape));
  }
  if (d_skip.numel() != d_inner) {
    throw ShapeError("ssm_scan: d_skip " + shape_str(d_skip.shape) + " vs a_bar " +
                     shape_str(a_bar.shape));
  }
  if (x.rank() != 2 || x.extent(0) != t_len || x.extent(1) != d_inner) {
    throw ShapeError("ssm_scan: x " + shape_str(x.shape) + " vs a_bar " + shape_str(a_bar.shape));
  }
}

// y[t,ch] = <c_t, h_t[ch,:]> + d_skip[ch] * x[t,ch], given materialized h.
template <typename T>
Tensor<T> readout_from_states(const Tensor<T>& h, const Tensor<T>& c, const Tensor<T>& d_skip,
                              const Tensor<T>& x) {
  const int64_t t_len = h.extent(0), d_inner = h.extent(1), n_state = h.extent(2);
  Tensor<T> y({t_len, d_inner});
#pragma omp parallel for schedule(static) if (t_len * d_inner * n_state > 16384)
  for (int64_t ch = 0; ch < d_inner; ++ch) {
    for (int64_t t = 0; t < t_len; ++t) {
      double acc = 0.0;
      for (int64_t n = 0; n < n_state; ++n) acc += static_cast<double>(c(t, n)) * static_cast<double>(h(t, ch, n));
      y(t, ch) = static_cast<T>(acc + static_cast<double>(d_skip.data[static_cast<size_t>(ch)]) * static_cast<double>(x(t, ch)));
    }
  }
  return y;
}

}  // namespace detail

// Sequential recurrence. If h_out is non-null it receives the full state
// trajectory [T x d_inner x N] for the backward pass.
template <typename T>
Tensor<T> ssm_scan_sequential(const Tensor<T>& a_bar, const Tensor<T>& bx_bar, const Tensor<T>& c,
                              const Tensor<T>& d_skip, const Tensor<T>& x,
                              Tensor<T>* h_out = nullptr) {
  detail::check_scan_shapes(a_bar, bx_bar, c, d_skip, x);
  const int64_t t_len = a_bar.extent(0), d_inner = a_bar.extent(1), n_state = a_bar.extent(2);
  Tensor<T> y({t_len, d_inner});
  if (h_out) *h_out = Tensor<T>({t_len, d_inner, n_state});
#pragma omp parallel for schedule(static) if (t_len * d_inner * n_state > 8192)
  for (int64_t ch = 0; ch < d_inner; ++ch) {
    std::vector<T> h(static_cast<size_t>(n_state), T(0));
    for (int64_t t = 0; t < t_len; ++t) {
      double acc = 0.0;
      for (int64_t n = 0; n < n_state; ++n) {
        const T hn = a_bar(t, ch, n) * h[static_cast<size_t>(n)] + bx_bar(t, ch, n);
        h[static_cast<size_t>(n)] = hn;
        acc += static_cast<double>(c(t, n)) * static_cast<double>(hn);
        if (h_out) (*h_out)(t, ch, n) = hn;
      }
      y(t, ch) = static_cast<T>(acc + static_cast<double>(d_skip.data[static_cast<size_t>(ch)]) * static_cast<double>(x(t, ch)));
    }
  }
  return y;
}

// Blelloch up-sweep/down-sweep evaluation of the same recurrence.
template <typename T>
Tensor<T> ssm_scan_parallel(const Tensor<T>& a_bar, const Tensor<T>& bx_bar, const Tensor<T>& c,
                            const Tensor<T>& d_skip, const Tensor<T>& x,
                            Tensor<T>* h_out = nullptr) {
  detail::check_scan_shapes(a_bar, bx_bar, c, d_skip, x);
  const int64_t t_len = a_bar.extent(0), d_inner = a_bar.extent(1), n_state = a_bar.extent(2);
  int64_t pow2 = 1;
  while (pow2 < t_len) pow2 <<= 1;

  Tensor<T> h({t_len, d_inner, n_state});
  const int64_t lanes = d_inner * n_state;
#pragma omp parallel
  {
    // Per-thread scratch: operator pairs being scanned plus the originals.
    std::vector<T> wa(static_cast<size_t>(pow2)), wb(static_cast<size_t>(pow2));
    std::vector<T> ea(static_cast<size_t>(t_len)), eb(static_cast<size_t>(t_len));
#pragma omp for schedule(static)
    for (int64_t lane = 0; lane < lanes; ++lane) {
      const int64_t ch = lane / n_state;
      const int64_t n = lane % n_state;
      for (int64_t t = 0; t < t_len; ++t) {
        ea[static_cast<size_t>(t)] = a_bar(t, ch, n);
        eb[static_cast<size_t>(t)] = bx_bar(t, ch, n);
        wa[static_cast<size_t>(t)] = ea[static_cast<size_t>(t)];
        wb[static_cast<size_t>(t)] = eb[static_cast<size_t>(t)];
      }
      for (int64_t t = t_len; t < pow2; ++t) {  // pad with the identity (1, 0)
        wa[static_cast<size_t>(t)] = T(1);
        wb[static_cast<size_t>(t)] = T(0);
      }
      // Up-sweep: node i absorbs the subtree to its left.
      for (int64_t step = 1; step < pow2; step <<= 1) {
        for (int64_t i = 2 * step - 1; i < pow2; i += 2 * step) {
          const int64_t l = i - step;
          const T la = wa[static_cast<size_t>(l)], lb = wb[static_cast<size_t>(l)];
          const T ra = wa[static_cast<size_t>(i)], rb = wb[static_cast<size_t>(i)];
          wa[static_cast<size_t>(i)] = ra * la;
          wb[static_cast<size_t>(i)] = ra * lb + rb;
        }
      }
      // Down-sweep: node value becomes the exclusive prefix of its subtree.
      wa[static_cast<size_t>(pow2 - 1)] = T(1);
      wb[static_cast<size_t>(pow2 - 1)] = T(0);
      for (int64_t step = pow2 >> 1; step >= 1; step >>= 1) {
        for (int64_t i = 2 * step - 1; i < pow2; i += 2 * step) {
          const int64_t l = i - step;
          const T la = wa[static_cast<size_t>(l)], lb = wb[static_cast<size_t>(l)];
          const T pa = wa[static_cast<size_t>(i)], pb = wb[static_cast<size_t>(i)];
          wa[static_cast<size_t>(l)] = pa;
          wb[static_cast<size_t>(l)] = pb;
          // right child prefix = parent prefix, then left subtree
          wa[static_cast<size_t>(i)] = la * pa;
          wb[static_cast<size_t>(i)] = la * pb + lb;
        }
      }
      // Inclusive value at t: exclusive prefix composed with element t.
      // h_t is the b-component since h_0 = 0.
      for (int64_t t = 0; t < t_len; ++t) {
        h(t, ch, n) = ea[static_cast<size_t>(t)] * wb[static_cast<size_t>(t)] + eb[static_cast<size_t>(t)];
      }
    }
  }
  Tensor<T> y = detail::readout_from_states(h, c, d_skip, x);
  if (h_out) *h_out = std::move(h);
  return y;
}

// Gradients of the scan output, computed lane-wise as the mirrored
// reverse-time linear recurrence:
//
//   dh_t = C_t[n] * gy_t[ch] + a_bar_{t+1} * dh_{t+1}
//   d(a_bar_t) = dh_t * h_{t-1};  d(bx_bar_t) = dh_t
//   d(C_t[n])  = sum_ch gy_t[ch] * h_t[ch,n]
//   d(d_skip)  = sum_t gy_t * x_t;  d(x_t) = gy_t * d_skip
//
// All grad buffers are accumulated (+=) and must be pre-sized.
template <typename T>
void ssm_scan_backward(const Tensor<T>& a_bar, const Tensor<T>& h, const Tensor<T>& c,
                       const Tensor<T>& d_skip, const Tensor<T>& x, const Tensor<T>& grad_y,
                       std::vector<T>* grad_a_bar, std::vector<T>* grad_bx_bar,
                       std::vector<T>* grad_c, std::vector<T>* grad_d_skip,
                       std::vector<T>* grad_x) {
  const int64_t t_len = a_bar.extent(0), d_inner = a_bar.extent(1), n_state = a_bar.extent(2);
  const int64_t lanes = d_inner * n_state;
  if (grad_a_bar || grad_bx_bar) {
#pragma omp parallel for schedule(static) if (t_len * lanes > 8192)
    for (int64_t lane = 0; lane < lanes; ++lane) {
      const int64_t ch = lane / n_state;
      const int64_t n = lane % n_state;
      T dh = T(0);
      for (int64_t t = t_len - 1; t >= 0; --t) {
        const T carry = t + 1 < t_len ? a_bar(t + 1, ch, n) * dh : T(0);
        dh = c(t, n) * grad_y(t, ch) + carry;
        const T h_prev = t > 0 ? h(t - 1, ch, n) : T(0);
        if (grad_a_bar) (*grad_a_bar)[static_cast<size_t>((t * d_inner + ch) * n_state + n)] += dh * h_prev;
        if (grad_bx_bar) (*grad_bx_bar)[static_cast<size_t>((t * d_inner + ch) * n_state + n)] += dh;
      }
    }
  }
  if (grad_c) {
#pragma omp parallel for schedule(static) if (t_len * lanes > 8192)
    for (int64_t t = 0; t < t_len; ++t) {
      for (int64_t n = 0; n < n_state; ++n) {
        double acc = 0.0;
        for (int64_t ch = 0; ch < d_inner; ++ch) acc += static_cast<double>(grad_y(t, ch)) * static_cast<double>(h(t, ch, n));
        (*grad_c)[static_cast<size_t>(t * n_state + n)] += static_cast<T>(acc);
      }
    }
  }
  if (grad_d_skip || grad_x) {
#pragma omp parallel for schedule(static) if (t_len * d_inner > 8192)
    for (int64_t ch = 0; ch < d_inner; ++ch) {
      double acc = 0.0;
      for (int64_t t = 0; t < t_len; ++t) {
        const double gy = static_cast<double>(grad_y(t, ch));
        acc += gy * static_cast<double>(x(t, ch));
        if (grad_x) (*grad_x)[static_cast<size_t>(t * d_inner + ch)] += static_cast<T>(gy * static_cast<double>(d_skip.data[static_cast<size_t>(ch)]));
      }
      if (grad_d_skip) (*grad_d_skip)[static_cast<size_t>(ch)] += static_cast<T>(acc);
    }
  }
}

enum class ScanVariant { Sequential, Parallel };

template <typename T>
Tensor<T> ssm_scan(ScanVariant variant, const Tensor<T>& a_bar, const Tensor<T>& bx_bar,
                   const Tensor<T>& c, const Tensor<T>& d_skip, const Tensor<T>& x,
                   Tensor<T>* h_out = nullptr) {
  return variant == ScanVariant::Sequential
             ? ssm_scan_sequential(a_bar, bx_bar, c, d_skip, x, h_out)
             : ssm_scan_parallel(a_bar, bx_bar, c, d_skip, x, h_out);
}

}  // namespace mva
