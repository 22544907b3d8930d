#include <doctest.h>

#include <cmath>

#include "mva/gradcheck.hpp"
#include "mva/rng.hpp"
#include "mva/scan.hpp"

using namespace mva;

namespace {

template <typename T>
Tensor<T> random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

struct ScanInputs {
  Tensor<float> a_bar, bx, c, d_skip, x;
};

ScanInputs random_scan_inputs(Rng& rng, int64_t t_len, int64_t d_inner, int64_t n_state) {
  ScanInputs in;
  in.a_bar = random_tensor<float>(rng, {t_len, d_inner, n_state}, 0.02, 0.98);
  in.bx = random_tensor<float>(rng, {t_len, d_inner, n_state}, -1.5, 1.5);
  in.c = random_tensor<float>(rng, {t_len, n_state}, -1.5, 1.5);
  in.d_skip = random_tensor<float>(rng, {d_inner}, -1.0, 1.0);
  in.x = random_tensor<float>(rng, {t_len, d_inner}, -1.5, 1.5);
  return in;
}

float max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  float m = 0.0f;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data[size_t(i)] - b.data[size_t(i)]));
  return m;
}

}  // namespace

TEST_CASE("discretize closed-form hand case") {
  // delta = ln 2, a = -1, b = 1 -> (0.5, 0.5)
  const auto [a_bar, b_bar] = discretize(std::log(2.0), -1.0, 1.0);
  CHECK(a_bar == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(b_bar == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("discretize limits") {
  // delta -> 0+: a_bar -> 1, b_bar -> 0
  const auto [a_bar, b_bar] = discretize(1e-9, -2.0, 3.0);
  CHECK(a_bar == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(std::abs(b_bar) < 1e-8);
  // b = 0 -> b_bar = 0 for any delta, a
  CHECK(discretize(0.7, -1.3, 0.0).second == 0.0);
  // a = 0 handled by the limit b_bar = delta * b
  const auto [a0, b0] = discretize(0.25, 0.0, 2.0);
  CHECK(a0 == 1.0);
  CHECK(b0 == 0.5);
}

TEST_CASE("sequential scan hand recurrence") {
  // matches the discretize example with x=[1,1], B=1, C=1, D=0
  Tensor<float> a_bar({2, 1, 1}, {0.5f, 0.5f});
  Tensor<float> bx({2, 1, 1}, {0.5f, 0.5f});
  Tensor<float> c({2, 1}, {1.0f, 1.0f});
  Tensor<float> d_skip({1}, {0.0f});
  Tensor<float> x({2, 1}, {1.0f, 1.0f});
  Tensor<float> y = ssm_scan_sequential(a_bar, bx, c, d_skip, x);
  CHECK(y(0, 0) == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(y(1, 0) == doctest::Approx(0.75).epsilon(1e-7));
}

TEST_CASE("scan degenerate regimes") {
  Rng rng(3);
  const int64_t t_len = 6, d_inner = 3, n_state = 2;
  ScanInputs in = random_scan_inputs(rng, t_len, d_inner, n_state);

  SUBCASE("a_bar = 0 is memoryless") {
    for (auto& v : in.a_bar.data) v = 0.0f;
    Tensor<float> y = ssm_scan_sequential(in.a_bar, in.bx, in.c, in.d_skip, in.x);
    for (int64_t t = 0; t < t_len; ++t) {
      for (int64_t ch = 0; ch < d_inner; ++ch) {
        double expect = double(in.d_skip(ch)) * double(in.x(t, ch));
        for (int64_t n = 0; n < n_state; ++n) expect += double(in.c(t, n)) * double(in.bx(t, ch, n));
        CHECK(y(t, ch) == doctest::Approx(expect).epsilon(1e-5));
      }
    }
  }
  SUBCASE("bx = 0 and d_skip = 0 gives identically zero output") {
    for (auto& v : in.bx.data) v = 0.0f;
    for (auto& v : in.d_skip.data) v = 0.0f;
    Tensor<float> y = ssm_scan_sequential(in.a_bar, in.bx, in.c, in.d_skip, in.x);
    for (float v : y.data) CHECK(v == 0.0f);
  }
}

TEST_CASE("parallel equals sequential exactly at T=1") {
  Rng rng(5);
  ScanInputs in = random_scan_inputs(rng, 1, 4, 8);
  Tensor<float> ys = ssm_scan_sequential(in.a_bar, in.bx, in.c, in.d_skip, in.x);
  Tensor<float> yp = ssm_scan_parallel(in.a_bar, in.bx, in.c, in.d_skip, in.x);
  CHECK(ys.data == yp.data);
}

TEST_CASE("parallel matches sequential across random shapes") {
  Rng shape_rng(7);
  const int64_t d_choices[] = {1, 4, 256};
  const int64_t n_choices[] = {1, 8};
  for (int iter = 0; iter < 24; ++iter) {
    const int64_t t_len = 1 + int64_t(shape_rng.below(2048));
    const int64_t d_inner = d_choices[shape_rng.below(3)];
    const int64_t n_state = n_choices[shape_rng.below(2)];
    Rng rng(1000 + uint64_t(iter));
    ScanInputs in = random_scan_inputs(rng, t_len, d_inner, n_state);
    Tensor<float> ys = ssm_scan_sequential(in.a_bar, in.bx, in.c, in.d_skip, in.x);
    Tensor<float> yp = ssm_scan_parallel(in.a_bar, in.bx, in.c, in.d_skip, in.x);
    INFO("T=", t_len, " d=", d_inner, " N=", n_state);
    CHECK(max_abs_diff(ys, yp) < 1e-5f);
  }
}

TEST_CASE("scan operator is associative") {
  // (p o q) o r == p o (q o r), elementwise error < 1e-6
  Rng rng(9);
  auto combine = [](std::pair<float, float> p, std::pair<float, float> q) {
    return std::pair<float, float>{q.first * p.first, q.first * p.second + q.second};
  };
  for (int iter = 0; iter < 100000; ++iter) {
    std::pair<float, float> p{float(rng.uniform(0.02, 0.98)), float(rng.uniform(-2, 2))};
    std::pair<float, float> q{float(rng.uniform(0.02, 0.98)), float(rng.uniform(-2, 2))};
    std::pair<float, float> r{float(rng.uniform(0.02, 0.98)), float(rng.uniform(-2, 2))};
    const auto left = combine(combine(p, q), r);
    const auto right = combine(p, combine(q, r));
    CHECK(std::abs(left.first - right.first) < 1e-6f);
    CHECK(std::abs(left.second - right.second) < 1e-6f);
  }
}

TEST_CASE("scan backward gradcheck and hand formulas") {
  Rng rng(11);
  const int64_t t_len = 5, d_inner = 2, n_state = 3;
  Tensor<double> a_bar = random_tensor<double>(rng, {t_len, d_inner, n_state}, 0.1, 0.9);
  Tensor<double> bx = random_tensor<double>(rng, {t_len, d_inner, n_state}, -1, 1);
  Tensor<double> c = random_tensor<double>(rng, {t_len, n_state}, -1, 1);
  Tensor<double> d_skip = random_tensor<double>(rng, {d_inner}, -1, 1);
  Tensor<double> x = random_tensor<double>(rng, {t_len, d_inner}, -1, 1);
  Tensor<double> r = random_tensor<double>(rng, {t_len, d_inner}, -1, 1);
  Tensor<double> h;
  ssm_scan_sequential(a_bar, bx, c, d_skip, x, &h);
  a_bar.ensure_grad();
  bx.ensure_grad();
  c.ensure_grad();
  d_skip.ensure_grad();
  x.ensure_grad();
  ssm_scan_backward(a_bar, h, c, d_skip, x, r, &a_bar.grad, &bx.grad, &c.grad, &d_skip.grad,
                    &x.grad);

  // d_skip gradient equals sum_t gy_t * x_t
  for (int64_t ch = 0; ch < d_inner; ++ch) {
    double expect = 0.0;
    for (int64_t t = 0; t < t_len; ++t) expect += r(t, ch) * x(t, ch);
    CHECK(d_skip.grad[size_t(ch)] == doctest::Approx(expect).epsilon(1e-12));
  }

  auto eval = [&] {
    Tensor<double> y = ssm_scan_sequential(a_bar, bx, c, d_skip, x);
    double acc = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += y.data[size_t(i)] * r.data[size_t(i)];
    return acc;
  };
  CHECK(gradcheck_max_rel_err({&a_bar, &bx, &c, &d_skip, &x}, eval) < 1e-4);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  Rng rng(13);
  const int64_t t_len = 4, d_inner = 2, n_state = 2;
  auto fin = random_scan_inputs(rng, t_len, d_inner, n_state);
  Tensor<float> h;
  ssm_scan_sequential(fin.a_bar, fin.bx, fin.c, fin.d_skip, fin.x, &h);
  Tensor<float> zero_gy({t_len, d_inner});
  fin.a_bar.ensure_grad();
  fin.bx.ensure_grad();
  fin.c.ensure_grad();
  fin.d_skip.ensure_grad();
  fin.x.ensure_grad();
  ssm_scan_backward(fin.a_bar, h, fin.c, fin.d_skip, fin.x, zero_gy, &fin.a_bar.grad,
                    &fin.bx.grad, &fin.c.grad, &fin.d_skip.grad, &fin.x.grad);
  for (float g : fin.a_bar.grad) CHECK(g == 0.0f);
  for (float g : fin.bx.grad) CHECK(g == 0.0f);
  for (float g : fin.c.grad) CHECK(g == 0.0f);
  for (float g : fin.d_skip.grad) CHECK(g == 0.0f);
  for (float g : fin.x.grad) CHECK(g == 0.0f);
}

TEST_CASE("states stay bounded for long sequences") {
  // a < 0, delta > 0 gives a_bar in (0,1); |h| is bounded by a geometric sum
  Rng rng(15);
  const int64_t t_len = 10000, d_inner = 2, n_state = 2;
  ScanInputs in = random_scan_inputs(rng, t_len, d_inner, n_state);
  float bx_max = 0.0f;
  float a_max = 0.0f;
  for (float v : in.bx.data) bx_max = std::max(bx_max, std::abs(v));
  for (float v : in.a_bar.data) a_max = std::max(a_max, v);
  Tensor<float> h;
  ssm_scan_sequential(in.a_bar, in.bx, in.c, in.d_skip, in.x, &h);
  const float bound = bx_max / (1.0f - a_max) + 1e-3f;
  for (float v : h.data) {
    CHECK(std::isfinite(v));
    CHECK(std::abs(v) <= bound);
  }
}

TEST_CASE("discretization keeps a_bar in (0,1) for valid inputs") {
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    const double delta = std::exp(rng.uniform(std::log(1e-4), std::log(10.0)));
    const double a = -std::exp(rng.uniform(-3.0, 3.0));
    const auto [a_bar, b_bar] = discretize(delta, a, rng.normal());
    CHECK(a_bar > 0.0);
    CHECK(a_bar < 1.0);
    CHECK(std::isfinite(b_bar));
  }
}

TEST_CASE("gradcheck suite scan scope passes") {
  for (const auto& rep : run_gradcheck_suite(42, "scan")) {
    INFO(rep.name, " max_rel_err=", rep.max_rel_err);
    CHECK(rep.pass);
  }
}
