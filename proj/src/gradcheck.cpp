#include "mva/gradcheck.hpp"

#include <cmath>

#include "mva/layers.hpp"
#include "mva/ops.hpp"
#include "mva/rng.hpp"
#include "mva/scan.hpp"
#include "mva/training.hpp"

namespace mva {

double gradcheck_max_rel_err(const std::vector<Tensor<double>*>& tensors,
                             const std::function<double()>& eval, double h) {
  double max_rel = 0.0;
  for (Tensor<double>* t : tensors) {
    for (int64_t i = 0; i < t->numel(); ++i) {
      double& slot = t->data[static_cast<size_t>(i)];
      const double orig = slot;
      slot = orig + h;
      const double lp = eval();
      slot = orig - h;
      const double lm = eval();
      slot = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double ga = t->grad[static_cast<size_t>(i)];
      const double rel = std::abs(ga - fd) / std::max({std::abs(ga), std::abs(fd), 1e-3});
      if (rel > max_rel) max_rel = rel;
    }
  }
  return max_rel;
}

namespace {

Tensor<double> randn(Rng& rng, Shape shape, double std = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.normal() * std;
  return t;
}

// Random objective weights so the scalar depends on every output element.
double weighted_sum(const Tensor<double>& y, const Tensor<double>& r) {
  double acc = 0.0;
  for (int64_t i = 0; i < y.numel(); ++i) acc += y.data[static_cast<size_t>(i)] * r.data[static_cast<size_t>(i)];
  return acc;
}

void randomize_model(ModelParams<double>& params, Rng& rng) {
  params.for_each([&rng](const std::string& name, Tensor<double>& t) {
    if (name.ends_with("a_log")) {
      for (auto& v : t.data) v = rng.uniform(-1.0, 1.5);
    } else {
      for (auto& v : t.data) v = rng.normal() * 0.5;
    }
  });
}

struct Check {
  std::string name;
  std::string scope;
  double tol;
  std::function<double(Rng&)> run;  // returns max rel err
};

double check_matmul(Rng& rng) {
  Tensor<double> a = randn(rng, {3, 4});
  Tensor<double> b = randn(rng, {4, 2});
  Tensor<double> r = randn(rng, {3, 2});
  a.ensure_grad();
  b.ensure_grad();
  matmul_backward(a, b, r, &a.grad, &b.grad);
  return gradcheck_max_rel_err({&a, &b}, [&] { return weighted_sum(matmul(a, b), r); });
}

double check_conv1d_causal(Rng& rng) {
  Tensor<double> x = randn(rng, {3, 7});
  Tensor<double> k = randn(rng, {2, 3, 3});
  Tensor<double> bias = randn(rng, {2});
  Tensor<double> r = randn(rng, {2, 7});
  const int64_t dilation = 2;
  x.ensure_grad();
  k.ensure_grad();
  bias.ensure_grad();
  conv1d_causal_backward(x, k, dilation, r, &x.grad, &k.grad, &bias.grad);
  return gradcheck_max_rel_err(
      {&x, &k, &bias}, [&] { return weighted_sum(conv1d_causal(x, k, bias, dilation), r); });
}

double check_conv1d_depthwise(Rng& rng) {
  Tensor<double> x = randn(rng, {6, 4});
  Tensor<double> w = randn(rng, {4, 3});
  Tensor<double> bias = randn(rng, {4});
  Tensor<double> r = randn(rng, {6, 4});
  x.ensure_grad();
  w.ensure_grad();
  bias.ensure_grad();
  conv1d_depthwise_causal_backward(x, w, r, &x.grad, &w.grad, &bias.grad);
  return gradcheck_max_rel_err(
      {&x, &w, &bias}, [&] { return weighted_sum(conv1d_depthwise_causal(x, w, bias), r); });
}

double check_layer_norm(Rng& rng) {
  Tensor<double> x = randn(rng, {3, 5});
  Tensor<double> gamma = randn(rng, {5});
  Tensor<double> beta = randn(rng, {5});
  Tensor<double> r = randn(rng, {3, 5});
  x.ensure_grad();
  gamma.ensure_grad();
  beta.ensure_grad();
  LayerNormCtx<double> ctx;
  layer_norm(x, gamma, beta, kLayerNormEps, &ctx);
  layer_norm_backward(ctx, gamma, r, &x.grad, &gamma.grad, &beta.grad);
  return gradcheck_max_rel_err(
      {&x, &gamma, &beta}, [&] { return weighted_sum(layer_norm(x, gamma, beta, kLayerNormEps), r); });
}

double check_activation(Rng& rng, Act act) {
  Tensor<double> x = randn(rng, {8});
  if (act == Act::Relu) {
    // keep samples away from the kink
    for (auto& v : x.data) v = (v < 0 ? -1.0 : 1.0) * (0.1 + std::abs(v));
  }
  Tensor<double> r = randn(rng, {8});
  x.ensure_grad();
  activate_backward(x, r, act, &x.grad);
  return gradcheck_max_rel_err({&x}, [&] { return weighted_sum(activate(x, act), r); });
}

double check_dropout(Rng& rng) {
  Tensor<double> x = randn(rng, {8, 4});
  Tensor<double> r = randn(rng, {8, 4});
  const double rate = 0.3;
  const uint64_t mask_seed = rng.next_u64();
  auto eval = [&] {
    Rng mask_rng(mask_seed);
    return weighted_sum(dropout(x, rate, true, mask_rng), r);
  };
  Rng mask_rng(mask_seed);
  std::vector<uint8_t> mask;
  dropout(x, rate, true, mask_rng, &mask);
  x.ensure_grad();
  dropout_backward(mask, rate, r, &x.grad);
  return gradcheck_max_rel_err({&x}, eval);
}

double check_ssm_scan(Rng& rng) {
  const int64_t t_len = 5, d_inner = 2, n_state = 3;
  Tensor<double> a_bar({t_len, d_inner, n_state});
  for (auto& v : a_bar.data) v = rng.uniform(0.1, 0.9);
  Tensor<double> bx = randn(rng, {t_len, d_inner, n_state});
  Tensor<double> c = randn(rng, {t_len, n_state});
  Tensor<double> d_skip = randn(rng, {d_inner});
  Tensor<double> x = randn(rng, {t_len, d_inner});
  Tensor<double> r = randn(rng, {t_len, d_inner});
  Tensor<double> h;
  ssm_scan_sequential(a_bar, bx, c, d_skip, x, &h);
  a_bar.ensure_grad();
  bx.ensure_grad();
  c.ensure_grad();
  d_skip.ensure_grad();
  x.ensure_grad();
  ssm_scan_backward(a_bar, h, c, d_skip, x, r, &a_bar.grad, &bx.grad, &c.grad, &d_skip.grad,
                    &x.grad);
  return gradcheck_max_rel_err({&a_bar, &bx, &c, &d_skip, &x}, [&] {
    return weighted_sum(ssm_scan_sequential(a_bar, bx, c, d_skip, x), r);
  });
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.tcn.in_dim = 4;
  cfg.tcn.hidden = 8;
  cfg.tcn.n_layers = 1;
  cfg.tcn.kernel_size = 3;
  cfg.tcn.dilations = {1};
  cfg.tcn.dropout = 0.0;
  cfg.mamba.d_model = 8;
  cfg.mamba.n_layers = 1;
  cfg.mamba.state_dim = 2;
  cfg.mamba.conv_width = 3;
  cfg.mamba.expand = 1;
  return cfg;
}

double check_mamba_block(Rng& rng) {
  ModelConfig cfg = tiny_config();
  ModelParams<double> params = ModelParams<double>::create(cfg);
  randomize_model(params, rng);
  params.ensure_grads();
  auto& bp = params.mamba[0];
  Tensor<double> x = randn(rng, {6, cfg.mamba.d_model});
  Tensor<double> r = randn(rng, {6, cfg.mamba.d_model});
  MambaBlockCtx<double> ctx;
  mamba_block_forward(bp, cfg.mamba, x, ScanVariant::Sequential, &ctx);
  x.ensure_grad();
  Tensor<double> gx({6, cfg.mamba.d_model});
  mamba_block_backward(bp, cfg.mamba, ctx, r, &gx);
  x.grad = gx.data;
  std::vector<Tensor<double>*> tensors = {&x};
  params.for_each([&tensors](const std::string&, Tensor<double>& t) { tensors.push_back(&t); });
  return gradcheck_max_rel_err(tensors, [&] {
    return weighted_sum(mamba_block_forward(bp, cfg.mamba, x, ScanVariant::Sequential), r);
  });
}

double check_tcn(Rng& rng) {
  ModelConfig cfg = tiny_config();
  cfg.tcn.n_layers = 2;
  cfg.tcn.dilations = {1, 2};
  ModelParams<double> params = ModelParams<double>::create(cfg);
  randomize_model(params, rng);
  params.ensure_grads();
  Tensor<double> f = randn(rng, {6, cfg.tcn.in_dim});
  Tensor<double> r = randn(rng, {6, cfg.tcn.hidden});
  std::vector<TcnLayerCtx<double>> ctxs;
  Tensor<double> out_cm;
  tcn_forward(params, f, false, nullptr, &ctxs, &out_cm);
  f.ensure_grad();
  Tensor<double> gf({6, cfg.tcn.in_dim});
  tcn_backward(params, ctxs, transpose2d(r), &gf);
  f.grad = gf.data;
  std::vector<Tensor<double>*> tensors = {&f};
  for (auto& lp : params.tcn) {
    tensors.push_back(&lp.kernel);
    tensors.push_back(&lp.bias);
    if (!lp.res_proj.empty()) tensors.push_back(&lp.res_proj);
  }
  return gradcheck_max_rel_err(
      tensors, [&] { return weighted_sum(tcn_forward(params, f, false, nullptr), r); });
}

double check_head(Rng& rng) {
  HeadParams<double> head;
  head.w = randn(rng, {6, 2});
  head.b = randn(rng, {2});
  head.w.ensure_grad();
  head.b.ensure_grad();
  Tensor<double> m = randn(rng, {5, 6});
  Tensor<double> r = randn(rng, {5, 2});
  HeadCtx<double> ctx;
  head_forward(head, m, &ctx);
  m.ensure_grad();
  Tensor<double> gm({5, 6});
  head_backward(head, ctx, r, &gm);
  m.grad = gm.data;
  return gradcheck_max_rel_err({&m, &head.w, &head.b},
                               [&] { return weighted_sum(head_forward(head, m), r); });
}

double check_ccc_loss(Rng& rng) {
  Tensor<double> pred = randn(rng, {7, 2});
  Tensor<double> target = randn(rng, {7, 2}, 0.5);
  std::vector<uint8_t> valid(7, 1);
  valid[2] = 0;  // exercise the mask
  pred.ensure_grad();
  auto res = ccc_loss(pred, target, valid);
  pred.grad = res.grad.data;
  return gradcheck_max_rel_err({&pred},
                               [&] { return ccc_loss(pred, target, valid).loss; });
}

double check_model_ccc_loss(Rng& rng) {
  ModelConfig cfg = tiny_config();
  ModelParams<double> params = ModelParams<double>::create(cfg);
  randomize_model(params, rng);
  params.ensure_grads();
  Tensor<double> f = randn(rng, {8, cfg.tcn.in_dim});
  Tensor<double> target = randn(rng, {8, 2}, 0.4);
  std::vector<uint8_t> valid(8, 1);
  auto eval = [&] {
    return ccc_loss(model_forward(params, f, false, nullptr, ScanVariant::Sequential), target,
                    valid)
        .loss;
  };
  ModelWorkspace<double> ws;
  Tensor<double> pred = model_forward(params, f, false, nullptr, ScanVariant::Sequential, &ws);
  auto res = ccc_loss(pred, target, valid);
  f.ensure_grad();
  Tensor<double> gf({8, cfg.tcn.in_dim});
  model_backward(params, ws, res.grad, &gf);
  f.grad = gf.data;
  std::vector<Tensor<double>*> tensors = {&f};
  params.for_each([&tensors](const std::string&, Tensor<double>& t) { tensors.push_back(&t); });
  return gradcheck_max_rel_err(tensors, eval);
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(uint64_t seed, const std::string& scope) {
  const std::vector<Check> checks = {
      {"matmul", "core", kGradCheckTol, check_matmul},
      {"conv1d_causal", "core", kGradCheckTol, check_conv1d_causal},
      {"conv1d_depthwise_causal", "core", kGradCheckTol, check_conv1d_depthwise},
      {"layer_norm", "core", kGradCheckTol, check_layer_norm},
      {"silu", "core", kGradCheckTol, [](Rng& r) { return check_activation(r, Act::Silu); }},
      {"softplus", "core", kGradCheckTol, [](Rng& r) { return check_activation(r, Act::Softplus); }},
      {"tanh", "core", kGradCheckTol, [](Rng& r) { return check_activation(r, Act::Tanh); }},
      {"relu", "core", kGradCheckTol, [](Rng& r) { return check_activation(r, Act::Relu); }},
      {"dropout", "core", kGradCheckTol, check_dropout},
      {"ssm_scan_backward", "scan", kGradCheckTol, check_ssm_scan},
      {"tcn_forward", "layers", kGradCheckTol, check_tcn},
      {"mamba_block", "layers", kGradCheckTol, check_mamba_block},
      {"head", "layers", kGradCheckTol, check_head},
      {"ccc_loss", "loss", kGradCheckTol, check_ccc_loss},
      {"model_ccc_loss", "loss", 1e-3, check_model_ccc_loss},
  };
  std::vector<GradCheckReport> reports;
  for (const auto& check : checks) {
    if (scope != "all" && scope != check.scope) continue;
    Rng rng = stream(seed, "gradcheck." + check.name);
    GradCheckReport rep;
    rep.name = check.name;
    rep.scope = check.scope;
    rep.tol = check.tol;
    rep.max_rel_err = check.run(rng);
    rep.pass = rep.max_rel_err < check.tol;
    reports.push_back(rep);
  }
  return reports;
}

}  // namespace mva
