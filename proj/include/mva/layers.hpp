#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mva/ops.hpp"
#include "mva/rng.hpp"
#include "mva/scan.hpp"
#include "mva/tensor.hpp"

// Model architecture: a four-layer dilated causal TCN, a cascade of Mamba
// blocks around the selective scan, and a bounded two-output regression
// head. Forward passes stash activations in per-segment workspaces; the
// backward pass walks them in reverse and accumulates parameter gradients.

namespace mva {

constexpr double kLayerNormEps = 1e-5;

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

struct TcnConfig {
  int64_t in_dim = 1024;
  int64_t hidden = 256;
  int n_layers = 4;
  int64_t kernel_size = 15;
  std::vector<int64_t> dilations = {1, 2, 4, 8};
  double dropout = 0.3;

  void validate() const {
    if (in_dim < 1 || hidden < 1 || n_layers < 1) throw ConfigError("tcn: dimensions must be positive");
    if (kernel_size < 1 || kernel_size % 2 == 0) {
      throw ConfigError("tcn: kernel_size must be odd and >= 1, got " + std::to_string(kernel_size));
    }
    if (static_cast<int>(dilations.size()) != n_layers) {
      throw ConfigError("tcn: need one dilation per layer (" + std::to_string(n_layers) + " layers, " +
                        std::to_string(dilations.size()) + " dilations)");
    }
    for (int64_t d : dilations)
      if (d < 1) throw ConfigError("tcn: dilations must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("tcn: dropout must lie in [0, 1)");
  }

  // 1 + sum (K-1)*d over layers.
  int64_t receptive_field() const {
    int64_t rf = 1;
    for (int64_t d : dilations) rf += (kernel_size - 1) * d;
    return rf;
  }
};

struct MambaConfig {
  int64_t d_model = 256;
  int n_layers = 4;
  int64_t state_dim = 8;
  int64_t conv_width = 4;
  int64_t expand = 1;

  int64_t d_inner() const { return expand * d_model; }

  void validate() const {
    if (d_model < 1 || n_layers < 1 || state_dim < 1 || conv_width < 1 || expand < 1) {
      throw ConfigError("mamba: all dimensions must be positive");
    }
  }
};

struct ModelConfig {
  TcnConfig tcn;
  MambaConfig mamba;

  void validate() const {
    tcn.validate();
    mamba.validate();
    if (tcn.hidden != mamba.d_model) {
      throw ConfigError("model: tcn.hidden (" + std::to_string(tcn.hidden) +
                        ") must equal mamba.d_model (" + std::to_string(mamba.d_model) + ")");
    }
  }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
struct TcnLayerParams {
  Tensor<T> kernel;    // [hidden x C_in x K]
  Tensor<T> bias;      // [hidden]
  Tensor<T> res_proj;  // [hidden x in_dim x 1], first layer only (width match)
};

template <typename T>
struct MambaBlockParams {
  Tensor<T> norm_gamma, norm_beta;  // [d_model]
  Tensor<T> w_in;                   // [d_model x 2*d_inner]; columns = [ssm | gate]
  Tensor<T> conv_w;                 // [d_inner x conv_width]
  Tensor<T> conv_b;                 // [d_inner]
  Tensor<T> w_delta;                // [d_inner x d_inner]
  Tensor<T> b_delta;                // [d_inner]
  Tensor<T> w_b, w_c;               // [d_inner x N]
  Tensor<T> a_log;                  // [d_inner x N]; state matrix is -exp(a_log)
  Tensor<T> d_skip;                 // [d_inner]
  Tensor<T> w_out;                  // [d_inner x d_model], zero-initialized
};

template <typename T>
struct HeadParams {
  Tensor<T> w;  // [d_model x 2]
  Tensor<T> b;  // [2]
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  std::vector<TcnLayerParams<T>> tcn;
  std::vector<MambaBlockParams<T>> mamba;
  HeadParams<T> head;

  // Allocates all tensors with the right shapes, zero-filled.
  static ModelParams create(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    const int64_t hid = cfg.tcn.hidden, k = cfg.tcn.kernel_size;
    for (int li = 0; li < cfg.tcn.n_layers; ++li) {
      const int64_t c_in = li == 0 ? cfg.tcn.in_dim : hid;
      TcnLayerParams<T> lp;
      lp.kernel = Tensor<T>({hid, c_in, k});
      lp.bias = Tensor<T>({hid});
      if (li == 0) lp.res_proj = Tensor<T>({hid, c_in, 1});
      p.tcn.push_back(std::move(lp));
    }
    const int64_t d = cfg.mamba.d_model, di = cfg.mamba.d_inner();
    const int64_t n = cfg.mamba.state_dim, cw = cfg.mamba.conv_width;
    for (int bi = 0; bi < cfg.mamba.n_layers; ++bi) {
      MambaBlockParams<T> bp;
      bp.norm_gamma = Tensor<T>({d});
      bp.norm_beta = Tensor<T>({d});
      bp.w_in = Tensor<T>({d, 2 * di});
      bp.conv_w = Tensor<T>({di, cw});
      bp.conv_b = Tensor<T>({di});
      bp.w_delta = Tensor<T>({di, di});
      bp.b_delta = Tensor<T>({di});
      bp.w_b = Tensor<T>({di, n});
      bp.w_c = Tensor<T>({di, n});
      bp.a_log = Tensor<T>({di, n});
      bp.d_skip = Tensor<T>({di});
      bp.w_out = Tensor<T>({di, d});
      p.mamba.push_back(std::move(bp));
    }
    p.head.w = Tensor<T>({d, 2});
    p.head.b = Tensor<T>({2});
    return p;
  }

  // Seeded initialization. Output projections start at zero so each Mamba
  // block is the identity and the untrained stack cannot explode.
  static ModelParams init(const ModelConfig& cfg, Rng& rng) {
    ModelParams p = create(cfg);
    auto fill_normal = [&rng](Tensor<T>& t, double std) {
      for (auto& v : t.data) v = static_cast<T>(rng.normal() * std);
    };
    for (size_t li = 0; li < p.tcn.size(); ++li) {
      auto& lp = p.tcn[li];
      const double fan_in = static_cast<double>(lp.kernel.extent(1) * lp.kernel.extent(2));
      fill_normal(lp.kernel, std::sqrt(2.0 / fan_in));
      if (!lp.res_proj.empty()) fill_normal(lp.res_proj, std::sqrt(1.0 / static_cast<double>(lp.res_proj.extent(1))));
    }
    const int64_t d = cfg.mamba.d_model, di = cfg.mamba.d_inner();
    for (auto& bp : p.mamba) {
      for (auto& v : bp.norm_gamma.data) v = T(1);
      fill_normal(bp.w_in, std::sqrt(1.0 / static_cast<double>(d)));
      fill_normal(bp.conv_w, std::sqrt(1.0 / static_cast<double>(cfg.mamba.conv_width)));
      fill_normal(bp.w_delta, std::sqrt(1.0 / static_cast<double>(di)));
      // step sizes start log-uniform in [1e-3, 1e-1]
      for (auto& v : bp.b_delta.data) {
        const double delta0 = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
        v = static_cast<T>(std::log(std::expm1(delta0)));
      }
      fill_normal(bp.w_b, std::sqrt(1.0 / static_cast<double>(di)));
      fill_normal(bp.w_c, std::sqrt(1.0 / static_cast<double>(di)));
      for (int64_t ch = 0; ch < di; ++ch)
        for (int64_t s = 0; s < cfg.mamba.state_dim; ++s)
          bp.a_log(ch, s) = static_cast<T>(std::log(static_cast<double>(s + 1)));
      for (auto& v : bp.d_skip.data) v = T(1);
    }
    fill_normal(p.head.w, std::sqrt(1.0 / static_cast<double>(d)));
    return p;
  }

  template <typename Fn>
  void for_each(Fn&& fn) {
    for (size_t i = 0; i < tcn.size(); ++i) {
      const std::string base = "tcn." + std::to_string(i) + ".";
      fn(base + "kernel", tcn[i].kernel);
      fn(base + "bias", tcn[i].bias);
      if (!tcn[i].res_proj.empty()) fn(base + "res_proj", tcn[i].res_proj);
    }
    for (size_t i = 0; i < mamba.size(); ++i) {
      const std::string base = "mamba." + std::to_string(i) + ".";
      fn(base + "norm_gamma", mamba[i].norm_gamma);
      fn(base + "norm_beta", mamba[i].norm_beta);
      fn(base + "w_in", mamba[i].w_in);
      fn(base + "conv_w", mamba[i].conv_w);
      fn(base + "conv_b", mamba[i].conv_b);
      fn(base + "w_delta", mamba[i].w_delta);
      fn(base + "b_delta", mamba[i].b_delta);
      fn(base + "w_b", mamba[i].w_b);
      fn(base + "w_c", mamba[i].w_c);
      fn(base + "a_log", mamba[i].a_log);
      fn(base + "d_skip", mamba[i].d_skip);
      fn(base + "w_out", mamba[i].w_out);
    }
    fn("head.w", head.w);
    fn("head.b", head.b);
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    const_cast<ModelParams*>(this)->for_each(
        [&fn](const std::string& name, Tensor<T>& t) { fn(name, static_cast<const Tensor<T>&>(t)); });
  }

  int64_t n_params() const {
    int64_t n = 0;
    for_each([&n](const std::string&, const Tensor<T>& t) { n += t.numel(); });
    return n;
  }

  void ensure_grads() {
    for_each([](const std::string&, Tensor<T>& t) { t.ensure_grad(); });
  }
  void zero_grads() {
    for_each([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
  }
};

// ---------------------------------------------------------------------------
// Forward/backward contexts
// ---------------------------------------------------------------------------

template <typename T>
struct TcnLayerCtx {
  Tensor<T> input;                 // [C_in x w]
  Tensor<T> preact;                // [hidden x w], conv output before ReLU
  std::vector<uint8_t> drop_mask;  // empty when dropout inactive
};

template <typename T>
struct MambaBlockCtx {
  Tensor<T> x_in;  // [w x d]
  LayerNormCtx<T> ln;
  Tensor<T> u;                 // normalized input
  Tensor<T> v, z;              // ssm branch / gate branch, [w x d_inner]
  Tensor<T> cv;                // depthwise conv output (pre-silu)
  Tensor<T> s;                 // silu(cv): scan input
  Tensor<T> delta_pre, delta;  // [w x d_inner]
  Tensor<T> b_t, c_t;          // [w x N]
  Tensor<T> h;                 // state trajectory [w x d_inner x N]
  Tensor<T> y_ssm;             // [w x d_inner]
};

template <typename T>
struct HeadCtx {
  Tensor<T> input;  // [w x d]
  Tensor<T> pred;   // [w x 2]
};

template <typename T>
struct ModelWorkspace {
  std::vector<TcnLayerCtx<T>> tcn;
  Tensor<T> tcn_out_cm;  // [hidden x w]
  std::vector<MambaBlockCtx<T>> mamba;
  HeadCtx<T> head;
};

// ---------------------------------------------------------------------------
// TCN: per layer, causal dilated conv -> ReLU -> dropout -> residual add.
// Internally channel-major [C x w]; the public boundary is time-major.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> tcn_forward(const ModelParams<T>& params, const Tensor<T>& f, bool training,
                      Rng* dropout_rng, std::vector<TcnLayerCtx<T>>* ctxs = nullptr,
                      Tensor<T>* out_cm = nullptr) {
  const TcnConfig& cfg = params.config.tcn;
  check_rank(f, 2, "tcn_forward");
  if (f.extent(1) != cfg.in_dim) {
    throw ShapeError("tcn_forward: input " + shape_str(f.shape) + " vs configured in_dim " +
                     std::to_string(cfg.in_dim));
  }
  if (ctxs) ctxs->assign(static_cast<size_t>(cfg.n_layers), TcnLayerCtx<T>{});
  Tensor<T> cur = transpose2d(f);  // [in_dim x w]
  for (int li = 0; li < cfg.n_layers; ++li) {
    const auto& lp = params.tcn[static_cast<size_t>(li)];
    Tensor<T> pre = conv1d_causal(cur, lp.kernel, lp.bias, cfg.dilations[static_cast<size_t>(li)]);
    Tensor<T> act = activate(pre, Act::Relu);
    std::vector<uint8_t> mask;
    const bool want_mask = ctxs && training && cfg.dropout > 0.0;
    if (training && cfg.dropout > 0.0) {
      if (!dropout_rng) throw Error("tcn_forward: training with dropout requires an rng");
      act = dropout(act, cfg.dropout, true, *dropout_rng, want_mask ? &mask : nullptr);
    }
    Tensor<T> res;
    if (li == 0) {
      Tensor<T> zero_bias({lp.res_proj.extent(0)});
      res = conv1d_causal(cur, lp.res_proj, zero_bias, 1);
    }
    const Tensor<T>& residual = li == 0 ? res : cur;
    Tensor<T> next(act.shape);
    for (int64_t i = 0; i < next.numel(); ++i)
      next.data[static_cast<size_t>(i)] = act.data[static_cast<size_t>(i)] + residual.data[static_cast<size_t>(i)];
    if (ctxs) {
      auto& ctx = (*ctxs)[static_cast<size_t>(li)];
      ctx.input = std::move(cur);
      ctx.preact = std::move(pre);
      ctx.drop_mask = std::move(mask);
    }
    cur = std::move(next);
  }
  Tensor<T> out = transpose2d(cur);  // [w x hidden]
  if (out_cm) *out_cm = std::move(cur);
  return out;
}

// grad_f is optional (the features are inputs, not parameters).
template <typename T>
void tcn_backward(ModelParams<T>& params, const std::vector<TcnLayerCtx<T>>& ctxs,
                  const Tensor<T>& grad_out_cm, Tensor<T>* grad_f = nullptr) {
  const TcnConfig& cfg = params.config.tcn;
  Tensor<T> gcur = grad_out_cm;  // [hidden x w]
  for (int li = cfg.n_layers - 1; li >= 0; --li) {
    auto& lp = params.tcn[static_cast<size_t>(li)];
    const auto& ctx = ctxs[static_cast<size_t>(li)];
    // through dropout
    Tensor<T> gact(gcur.shape);
    if (!ctx.drop_mask.empty()) {
      dropout_backward(ctx.drop_mask, cfg.dropout, gcur, &gact.data);
    } else {
      gact.data = gcur.data;
    }
    // through ReLU
    Tensor<T> gpre(gact.shape);
    activate_backward(ctx.preact, gact, Act::Relu, &gpre.data);
    // through conv (+ residual path)
    Tensor<T> gin(ctx.input.shape);
    conv1d_causal_backward(ctx.input, lp.kernel, cfg.dilations[static_cast<size_t>(li)], gpre,
                           &gin.data, &lp.kernel.grad, &lp.bias.grad);
    if (li == 0) {
      conv1d_causal_backward(ctx.input, lp.res_proj, 1, gcur, &gin.data, &lp.res_proj.grad,
                             static_cast<std::vector<T>*>(nullptr));
    } else {
      for (int64_t i = 0; i < gin.numel(); ++i) gin.data[static_cast<size_t>(i)] += gcur.data[static_cast<size_t>(i)];
    }
    gcur = std::move(gin);
  }
  if (grad_f) {
    Tensor<T> gf = transpose2d(gcur);
    for (int64_t i = 0; i < gf.numel(); ++i) grad_f->data[static_cast<size_t>(i)] += gf.data[static_cast<size_t>(i)];
  }
}

// ---------------------------------------------------------------------------
// Mamba block
// ---------------------------------------------------------------------------

namespace detail {

// a_bar = exp(delta*a), k = expm1(delta*a)/a, bx_bar = k * B * s, with
// a = -exp(a_log). Shared by forward and backward so recomputation is exact.
template <typename T>
void materialize_discretization(const Tensor<T>& delta, const Tensor<T>& a_log,
                                const Tensor<T>& b_t, const Tensor<T>& s, Tensor<T>* a_bar,
                                Tensor<T>* k_out, Tensor<T>* bx_bar) {
  const int64_t t_len = delta.extent(0), d_inner = delta.extent(1), n_state = a_log.extent(1);
#pragma omp parallel for schedule(static) if (t_len * d_inner * n_state > 8192)
  for (int64_t ch = 0; ch < d_inner; ++ch) {
    for (int64_t n = 0; n < n_state; ++n) {
      const T a = -std::exp(a_log(ch, n));
      for (int64_t t = 0; t < t_len; ++t) {
        const T da = delta(t, ch) * a;
        const T ab = std::exp(da);
        const T k = std::expm1(da) / a;  // a < 0 always
        if (a_bar) (*a_bar)(t, ch, n) = ab;
        if (k_out) (*k_out)(t, ch, n) = k;
        if (bx_bar) (*bx_bar)(t, ch, n) = k * b_t(t, n) * s(t, ch);
      }
    }
  }
}

// d/da [expm1(da)/a], series branch for small |da|.
template <typename T>
T dk_da(T delta, T a, T ab) {
  const T da = delta * a;
  if (std::abs(da) < T(1e-4)) {
    return delta * delta * (T(0.5) + da / T(3));
  }
  return (delta * ab * a - std::expm1(da)) / (a * a);
}

}  // namespace detail

// Pre-norm residual block: the normalized input splits into an SSM branch
// (depthwise causal conv -> silu -> selective scan) and a silu gate; the
// gated product is projected back to d_model and added to the input.
template <typename T>
Tensor<T> mamba_block_forward(const MambaBlockParams<T>& p, const MambaConfig& cfg,
                              const Tensor<T>& x, ScanVariant variant,
                              MambaBlockCtx<T>* ctx = nullptr) {
  check_rank(x, 2, "mamba_block_forward");
  if (x.extent(1) != cfg.d_model) {
    throw ShapeError("mamba_block_forward: input " + shape_str(x.shape) + " vs d_model " +
                     std::to_string(cfg.d_model));
  }
  MambaBlockCtx<T> local;
  MambaBlockCtx<T>& c = ctx ? *ctx : local;
  const int64_t w = x.extent(0), di = cfg.d_inner(), n = cfg.state_dim;

  c.u = layer_norm(x, p.norm_gamma, p.norm_beta, kLayerNormEps, &c.ln);
  Tensor<T> vz = matmul(c.u, p.w_in);  // [w x 2*di]
  c.v = Tensor<T>({w, di});
  c.z = Tensor<T>({w, di});
  for (int64_t t = 0; t < w; ++t) {
    for (int64_t j = 0; j < di; ++j) {
      c.v(t, j) = vz(t, j);
      c.z(t, j) = vz(t, di + j);
    }
  }
  c.cv = conv1d_depthwise_causal(c.v, p.conv_w, p.conv_b);
  c.s = activate(c.cv, Act::Silu);

  c.delta_pre = matmul(c.s, p.w_delta);
  for (int64_t t = 0; t < w; ++t)
    for (int64_t j = 0; j < di; ++j) c.delta_pre(t, j) += p.b_delta.data[static_cast<size_t>(j)];
  c.delta = activate(c.delta_pre, Act::Softplus);
  c.b_t = matmul(c.s, p.w_b);
  c.c_t = matmul(c.s, p.w_c);

  Tensor<T> a_bar({w, di, n}), bx_bar({w, di, n});
  detail::materialize_discretization(c.delta, p.a_log, c.b_t, c.s, &a_bar, static_cast<Tensor<T>*>(nullptr), &bx_bar);
  c.y_ssm = ssm_scan(variant, a_bar, bx_bar, c.c_t, p.d_skip, c.s, ctx ? &c.h : nullptr);

  // merged = y_ssm .* silu(z)
  Tensor<T> merged({w, di});
  for (int64_t i = 0; i < merged.numel(); ++i)
    merged.data[static_cast<size_t>(i)] = c.y_ssm.data[static_cast<size_t>(i)] * silu_scalar(c.z.data[static_cast<size_t>(i)]);
  Tensor<T> out = matmul(merged, p.w_out);
  for (int64_t i = 0; i < out.numel(); ++i) out.data[static_cast<size_t>(i)] += x.data[static_cast<size_t>(i)];
  if (ctx) c.x_in = x;
  return out;
}

template <typename T>
void mamba_block_backward(MambaBlockParams<T>& p, const MambaConfig& cfg, MambaBlockCtx<T>& c,
                          const Tensor<T>& grad_out, Tensor<T>* grad_x) {
  const int64_t w = c.x_in.extent(0), di = cfg.d_inner(), n = cfg.state_dim;

  // out = x + merged * w_out
  Tensor<T> merged({w, di});
  for (int64_t i = 0; i < merged.numel(); ++i)
    merged.data[static_cast<size_t>(i)] = c.y_ssm.data[static_cast<size_t>(i)] * silu_scalar(c.z.data[static_cast<size_t>(i)]);
  Tensor<T> g_merged({w, di});
  matmul_backward(merged, p.w_out, grad_out, &g_merged.data, &p.w_out.grad);

  // merged = y_ssm .* silu(z)
  Tensor<T> g_yssm({w, di}), g_z({w, di});
  for (int64_t i = 0; i < g_merged.numel(); ++i) {
    const T zi = c.z.data[static_cast<size_t>(i)];
    const T gm = g_merged.data[static_cast<size_t>(i)];
    g_yssm.data[static_cast<size_t>(i)] = gm * silu_scalar(zi);
    g_z.data[static_cast<size_t>(i)] = gm * c.y_ssm.data[static_cast<size_t>(i)] * silu_grad_scalar(zi);
  }

  // scan backward (a_bar, k, bx recomputed exactly as in forward)
  Tensor<T> a_bar({w, di, n}), k({w, di, n});
  detail::materialize_discretization(c.delta, p.a_log, c.b_t, c.s, &a_bar, &k, static_cast<Tensor<T>*>(nullptr));
  Tensor<T> g_abar({w, di, n}), g_bxbar({w, di, n}), g_ct({w, n}), g_s({w, di});
  ssm_scan_backward(a_bar, c.h, c.c_t, p.d_skip, c.s, g_yssm, &g_abar.data, &g_bxbar.data,
                    &g_ct.data, &p.d_skip.grad, &g_s.data);

  // through the discretization into delta, a_log, B, and s
  Tensor<T> g_delta({w, di}), g_bt({w, n});
#pragma omp parallel for schedule(static) if (w * di * n > 8192)
  for (int64_t ch = 0; ch < di; ++ch) {
    for (int64_t nn = 0; nn < n; ++nn) {
      const T a = -std::exp(p.a_log(ch, nn));
      double g_a_acc = 0.0;
      for (int64_t t = 0; t < w; ++t) {
        const T ga = g_abar(t, ch, nn);
        const T gb = g_bxbar(t, ch, nn);
        const T ab = a_bar(t, ch, nn);
        const T st = c.s(t, ch);
        const T bt = c.b_t(t, nn);
        const T dt = c.delta(t, ch);
        // d a_bar/d delta = a*ab ; d bx/d delta = ab*B*s
        g_delta(t, ch) += ga * a * ab + gb * ab * bt * st;
        // d a_bar/d a = delta*ab ; d bx/d a = dk_da*B*s
        g_a_acc += static_cast<double>(ga) * static_cast<double>(dt) * static_cast<double>(ab) +
                   static_cast<double>(gb) * static_cast<double>(detail::dk_da(dt, a, ab)) *
                       static_cast<double>(bt) * static_cast<double>(st);
        // d bx/d s contribution (k*B); B handled in the t-parallel pass below
        g_s(t, ch) += gb * k(t, ch, nn) * bt;
      }
      // a = -exp(a_log) so da/da_log = a
      p.a_log.grad[static_cast<size_t>(ch * n + nn)] += static_cast<T>(g_a_acc * static_cast<double>(a));
    }
  }
#pragma omp parallel for schedule(static) if (w * di * n > 8192)
  for (int64_t t = 0; t < w; ++t) {
    for (int64_t nn = 0; nn < n; ++nn) {
      double acc = 0.0;
      for (int64_t ch = 0; ch < di; ++ch)
        acc += static_cast<double>(g_bxbar(t, ch, nn)) * static_cast<double>(k(t, ch, nn)) * static_cast<double>(c.s(t, ch));
      g_bt(t, nn) += static_cast<T>(acc);
    }
  }

  // delta = softplus(delta_pre); delta_pre = s*w_delta + b_delta
  Tensor<T> g_deltapre({w, di});
  activate_backward(c.delta_pre, g_delta, Act::Softplus, &g_deltapre.data);
  for (int64_t t = 0; t < w; ++t)
    for (int64_t j = 0; j < di; ++j) p.b_delta.grad[static_cast<size_t>(j)] += g_deltapre(t, j);
  matmul_backward(c.s, p.w_delta, g_deltapre, &g_s.data, &p.w_delta.grad);

  // B/C projections
  matmul_backward(c.s, p.w_b, g_bt, &g_s.data, &p.w_b.grad);
  matmul_backward(c.s, p.w_c, g_ct, &g_s.data, &p.w_c.grad);

  // s = silu(cv); cv = depthwise_conv(v)
  Tensor<T> g_cv({w, di});
  activate_backward(c.cv, g_s, Act::Silu, &g_cv.data);
  Tensor<T> g_v({w, di});
  conv1d_depthwise_causal_backward(c.v, p.conv_w, g_cv, &g_v.data, &p.conv_w.grad, &p.conv_b.grad);

  // input projection u -> [v | z]
  Tensor<T> g_vz({w, 2 * di});
  for (int64_t t = 0; t < w; ++t) {
    for (int64_t j = 0; j < di; ++j) {
      g_vz(t, j) = g_v(t, j);
      g_vz(t, di + j) = g_z(t, j);
    }
  }
  Tensor<T> g_u({w, cfg.d_model});
  matmul_backward(c.u, p.w_in, g_vz, &g_u.data, &p.w_in.grad);

  // layer norm + residual
  layer_norm_backward(c.ln, p.norm_gamma, g_u, grad_x ? &grad_x->data : nullptr,
                      &p.norm_gamma.grad, &p.norm_beta.grad);
  if (grad_x) {
    for (int64_t i = 0; i < grad_out.numel(); ++i) grad_x->data[static_cast<size_t>(i)] += grad_out.data[static_cast<size_t>(i)];
  }
}

// ---------------------------------------------------------------------------
// Head: affine map to (valence, arousal) bounded by tanh.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> head_forward(const HeadParams<T>& p, const Tensor<T>& m, HeadCtx<T>* ctx = nullptr) {
  Tensor<T> lin = matmul(m, p.w);
  const int64_t w = lin.extent(0);
  for (int64_t t = 0; t < w; ++t) {
    lin(t, 0) += p.b.data[0];
    lin(t, 1) += p.b.data[1];
  }
  Tensor<T> pred = activate(lin, Act::Tanh);
  if (ctx) {
    ctx->input = m;
    ctx->pred = pred;
  }
  return pred;
}

template <typename T>
void head_backward(HeadParams<T>& p, const HeadCtx<T>& ctx, const Tensor<T>& grad_pred,
                   Tensor<T>* grad_m) {
  Tensor<T> g_lin(grad_pred.shape);
  for (int64_t i = 0; i < g_lin.numel(); ++i) {
    const T y = ctx.pred.data[static_cast<size_t>(i)];
    g_lin.data[static_cast<size_t>(i)] = grad_pred.data[static_cast<size_t>(i)] * tanh_grad_from_output(y);
  }
  const int64_t w = g_lin.extent(0);
  for (int64_t t = 0; t < w; ++t) {
    p.b.grad[0] += g_lin(t, 0);
    p.b.grad[1] += g_lin(t, 1);
  }
  matmul_backward(ctx.input, p.w, g_lin, grad_m ? &grad_m->data : nullptr, &p.w.grad);
}

// ---------------------------------------------------------------------------
// Full model: head(mamba^L(tcn(f)))
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> model_forward(const ModelParams<T>& params, const Tensor<T>& f, bool training,
                        Rng* dropout_rng, ScanVariant variant, ModelWorkspace<T>* ws = nullptr) {
  Tensor<T> cur = tcn_forward(params, f, training, dropout_rng, ws ? &ws->tcn : nullptr,
                              ws ? &ws->tcn_out_cm : nullptr);
  if (ws) ws->mamba.assign(params.mamba.size(), MambaBlockCtx<T>{});
  for (size_t bi = 0; bi < params.mamba.size(); ++bi) {
    cur = mamba_block_forward(params.mamba[bi], params.config.mamba, cur, variant,
                              ws ? &ws->mamba[bi] : nullptr);
  }
  return head_forward(params.head, cur, ws ? &ws->head : nullptr);
}

template <typename T>
void model_backward(ModelParams<T>& params, ModelWorkspace<T>& ws, const Tensor<T>& grad_pred,
                    Tensor<T>* grad_f = nullptr) {
  const int64_t w = grad_pred.extent(0);
  const int64_t d = params.config.mamba.d_model;
  Tensor<T> g_cur({w, d});
  head_backward(params.head, ws.head, grad_pred, &g_cur);
  for (size_t bi = params.mamba.size(); bi-- > 0;) {
    Tensor<T> g_prev({w, d});
    mamba_block_backward(params.mamba[bi], params.config.mamba, ws.mamba[bi], g_cur, &g_prev);
    g_cur = std::move(g_prev);
  }
  Tensor<T> g_tcn_cm = transpose2d(g_cur);  // [hidden x w]
  tcn_backward(params, ws.tcn, g_tcn_cm, grad_f);
}

}  // namespace mva
