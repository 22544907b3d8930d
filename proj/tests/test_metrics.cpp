#include <doctest.h>

#include <cmath>
#include <vector>

#include "mva/data_io.hpp"
#include "mva/metrics.hpp"
#include "mva/rng.hpp"

using namespace mva;

namespace {

// Independent oracle: two-pass direct-formula CCC in plain 64-bit sums.
CccBreakdown ccc_naive(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0, cov = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
    cov += (x[i] - mx) * (y[i] - my);
  }
  vx /= n;
  vy /= n;
  cov /= n;
  CccBreakdown r;
  r.mean_x = mx;
  r.mean_y = my;
  r.var_x = vx;
  r.var_y = vy;
  r.cov_xy = cov;
  const double denom = vx + vy + (mx - my) * (mx - my);
  r.ccc = denom > 0 ? 2 * cov / denom : 0.0;
  r.pearson = vx * vy > 0 ? cov / std::sqrt(vx * vy) : 0.0;
  return r;
}

}  // namespace

TEST_CASE("perfect agreement gives ccc 1") {
  std::vector<double> x = {0.1, 0.5, -0.3};
  CHECK(ccc(std::span<const double>(x), std::span<const double>(x)).ccc == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("constant series against varying series gives ccc 0") {
  std::vector<double> x = {0.4, 0.4, 0.4, 0.4};
  std::vector<double> y = {-0.5, 0.0, 0.5, 1.0};
  const auto r = ccc(std::span<const double>(x), std::span<const double>(y));
  CHECK(r.cov_xy == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(r.ccc == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_FALSE(r.degenerate);
}

TEST_CASE("hand-computed 4/7 case pins the population divisor") {
  // x=[1,2,3], y=[2,3,4]: var_x=var_y=cov=2/3, mean gap 1
  // ccc = (4/3)/(2/3+2/3+1) = 4/7
  std::vector<double> x = {1, 2, 3};
  std::vector<double> y = {2, 3, 4};
  const auto r = ccc(std::span<const double>(x), std::span<const double>(y));
  CHECK(r.var_x == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(r.var_y == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(r.cov_xy == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(std::abs(r.ccc - 4.0 / 7.0) < 1e-12);
  CHECK(r.pearson == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("insufficient data raises") {
  std::vector<double> x = {1.0};
  std::vector<double> y = {1.0};
  CHECK_THROWS_AS(ccc(std::span<const double>(x), std::span<const double>(y)),
                  InsufficientDataError);
  std::vector<double> x3 = {1, 2, 3};
  std::vector<uint8_t> mask = {1, 0, 0};
  CHECK_THROWS_AS(
      ccc(std::span<const double>(x3), std::span<const double>(x3), std::span<const uint8_t>(mask)),
      InsufficientDataError);
}

TEST_CASE("degenerate denominator flagged, ccc 0") {
  std::vector<double> x = {0.25, 0.25, 0.25};
  const auto r = ccc(std::span<const double>(x), std::span<const double>(x));
  CHECK(r.ccc == 0.0);
  CHECK(r.degenerate);
}

TEST_CASE("ccc is symmetric and self-agreement is exact") {
  Rng rng(5);
  std::vector<double> x(64), y(64);
  for (size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    y[i] = 0.4 * x[i] + 0.3 * rng.normal();
  }
  const auto xy = ccc(std::span<const double>(x), std::span<const double>(y));
  const auto yx = ccc(std::span<const double>(y), std::span<const double>(x));
  CHECK(xy.ccc == doctest::Approx(yx.ccc).epsilon(1e-14));
  CHECK(ccc(std::span<const double>(x), std::span<const double>(x)).ccc ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ccc magnitude never exceeds pearson") {
  Rng rng(7);
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<double> x(32), y(32);
    const double scale = std::exp(rng.uniform(-2, 2));
    const double shift = rng.uniform(-1, 1);
    for (size_t i = 0; i < x.size(); ++i) {
      x[i] = rng.normal();
      y[i] = scale * (rng.uniform() < 0.5 ? x[i] : rng.normal()) + shift;
    }
    const auto r = ccc(std::span<const double>(x), std::span<const double>(y));
    CHECK(std::abs(r.ccc) <= std::abs(r.pearson) + 1e-12);
    CHECK(std::abs(r.pearson) <= 1.0 + 1e-9);
  }
}

TEST_CASE("ccc invariant under shared positive affine maps") {
  Rng rng(9);
  std::vector<double> x(50), y(50);
  for (size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    y[i] = 0.7 * x[i] + 0.2 * rng.normal();
  }
  const double base = ccc(std::span<const double>(x), std::span<const double>(y)).ccc;
  for (int iter = 0; iter < 20; ++iter) {
    const double a = std::exp(rng.uniform(-1.5, 1.5));
    const double b = rng.uniform(-2, 2);
    std::vector<double> xs(50), ys(50);
    for (size_t i = 0; i < x.size(); ++i) {
      xs[i] = a * x[i] + b;
      ys[i] = a * y[i] + b;
    }
    CHECK(std::abs(ccc(std::span<const double>(xs), std::span<const double>(ys)).ccc - base) <
          1e-9);
  }
}

TEST_CASE("streaming implementation matches the naive oracle to 1e-10") {
  Rng rng(11);
  for (int iter = 0; iter < 1000; ++iter) {
    const size_t n = 2 + rng.below(500);
    std::vector<double> x(n), y(n);
    const double scale = std::exp(rng.uniform(-3, 3));
    for (size_t i = 0; i < n; ++i) {
      x[i] = scale * rng.normal() + rng.uniform(-1, 1);
      y[i] = scale * rng.normal() + rng.uniform(-1, 1);
    }
    const auto fast = ccc(std::span<const double>(x), std::span<const double>(y));
    const auto naive = ccc_naive(x, y);
    CHECK(std::abs(fast.ccc - naive.ccc) <= 1e-10);
    CHECK(std::abs(fast.pearson - naive.pearson) <= 1e-10);
  }
}

TEST_CASE("ccc respects the validity mask") {
  std::vector<float> x = {1, 99, 2, 3};
  std::vector<float> y = {2, -99, 3, 4};
  std::vector<uint8_t> mask = {1, 0, 1, 1};
  const auto r = ccc(std::span<const float>(x), std::span<const float>(y),
                     std::span<const uint8_t>(mask));
  CHECK(r.n == 3);
  CHECK(std::abs(r.ccc - 4.0 / 7.0) < 1e-6);
}

TEST_CASE("p_va reproduces the reported fold arithmetic") {
  CHECK(std::abs(p_va(0.5454, 0.3848) - 0.4651) < 1e-12);
  CHECK(std::abs(p_va(0.24, 0.20) - 0.22) < 1e-12);
  CHECK(p_va(1.0, 1.0) == 1.0);
}

TEST_CASE("evaluate over a VaSeries") {
  const int64_t n = 50;
  Tensor<float> pred({n, 2});
  VaSeries labels;
  Rng rng(13);
  for (int64_t i = 0; i < n; ++i) {
    const float v = float(std::sin(0.3 * double(i)));
    const float a = float(std::cos(0.2 * double(i)));
    pred(i, 0) = v;
    pred(i, 1) = a;
    labels.valence.push_back(v);
    labels.arousal.push_back(a);
    labels.valid.push_back(1);
  }
  SUBCASE("predictions equal to labels give p_va 1") {
    const auto r = evaluate(pred, labels);
    CHECK(r.p_va == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(r.n_valid == n);
  }
  SUBCASE("constant predictions on varying labels give p_va 0") {
    for (auto& v : pred.data) v = 0.0f;
    const auto r = evaluate(pred, labels);
    CHECK(r.p_va == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("invalid frames are excluded") {
    labels.valence[3] = -5.0f;
    labels.valid[3] = 0;
    const auto r = evaluate(pred, labels);
    CHECK(r.n_valid == n - 1);
  }
}

TEST_CASE("fold report reproduces the published table arithmetic") {
  // fold, valence ccc, arousal ccc, published average
  const double rows[6][4] = {{0, 0.5454, 0.3848, 0.4651}, {1, 0.5423, 0.3612, 0.4517},
                             {2, 0.5362, 0.4310, 0.4836}, {3, 0.5231, 0.3413, 0.4322},
                             {4, 0.5216, 0.3540, 0.4378}, {5, 0.5305, 0.4275, 0.4790}};
  std::vector<FoldResult> folds;
  for (const auto& row : rows) {
    FoldResult f;
    f.fold = int(row[0]);
    f.report.valence.ccc = row[1];
    f.report.arousal.ccc = row[2];
    f.report.p_va = p_va(row[1], row[2]);
    folds.push_back(f);
  }
  const FoldReport report = fold_report(folds);
  for (const auto& row : rows) {
    CHECK(std::abs(folds[size_t(row[0])].report.p_va - row[3]) < 1e-4);  // matches to 4 decimals
  }
  const std::string text = report.to_text();
  CHECK(text.find("0.4651") != std::string::npos);
  CHECK(text.find("0.4836") != std::string::npos);
  CHECK(text.find("baseline") != std::string::npos);
  CHECK(text.find("0.2200") != std::string::npos);
  const std::string csv = report.to_csv();
  CHECK(csv.rfind("fold,ccc_valence,ccc_arousal,p_va,n_valid\n", 0) == 0);
  CHECK(csv.find("baseline,0.240000,0.200000,0.220000,0") != std::string::npos);
}

TEST_CASE("fold report edge cases") {
  CHECK_THROWS_AS(fold_report({}), Error);
  FoldResult one;
  one.fold = 2;
  one.report.valence.ccc = 0.5;
  one.report.arousal.ccc = 0.3;
  one.report.p_va = 0.4;
  const FoldReport r = fold_report({one});
  // one data row + header + baseline
  int lines = 0;
  for (char c : r.to_text()) lines += c == '\n';
  CHECK(lines == 3);
}
