#include "mva/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "mva/data_io.hpp"
#include "mva/errors.hpp"

namespace mva {

namespace {

// Neumaier-compensated accumulator; fixed iteration order everywhere.
struct CompensatedSum {
  double sum = 0.0, comp = 0.0;
  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      comp += (sum - t) + x;
    } else {
      comp += (x - t) + sum;
    }
    sum = t;
  }
  double get() const { return sum + comp; }
};

template <typename S>
CccBreakdown ccc_impl(std::span<const S> x, std::span<const S> y, std::span<const uint8_t> mask) {
  if (x.size() != y.size()) {
    throw ShapeError("ccc: series lengths disagree: [" + std::to_string(x.size()) + "] vs [" +
                     std::to_string(y.size()) + "]");
  }
  if (!mask.empty() && mask.size() != x.size()) {
    throw ShapeError("ccc: mask length [" + std::to_string(mask.size()) + "] vs series [" +
                     std::to_string(x.size()) + "]");
  }
  CompensatedSum sx, sy, sxx, syy, sxy;
  int64_t n = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double xi = static_cast<double>(x[i]);
    const double yi = static_cast<double>(y[i]);
    sx.add(xi);
    sy.add(yi);
    sxx.add(xi * xi);
    syy.add(yi * yi);
    sxy.add(xi * yi);
    ++n;
  }
  if (n < 2) {
    throw InsufficientDataError("ccc: need >= 2 valid paired samples, got " + std::to_string(n));
  }
  CccBreakdown r;
  r.n = n;
  const double dn = static_cast<double>(n);
  r.mean_x = sx.get() / dn;
  r.mean_y = sy.get() / dn;
  r.var_x = std::max(0.0, sxx.get() / dn - r.mean_x * r.mean_x);
  r.var_y = std::max(0.0, syy.get() / dn - r.mean_y * r.mean_y);
  r.cov_xy = sxy.get() / dn - r.mean_x * r.mean_y;
  const double sd = std::sqrt(r.var_x * r.var_y);
  r.pearson = sd > 0.0 ? r.cov_xy / sd : 0.0;
  const double gap = r.mean_x - r.mean_y;
  const double denom = r.var_x + r.var_y + gap * gap;
  if (denom > 0.0) {
    r.ccc = 2.0 * r.cov_xy / denom;
  } else {
    r.ccc = 0.0;
    r.degenerate = true;
  }
  return r;
}

}  // namespace

CccBreakdown ccc(std::span<const double> x, std::span<const double> y,
                 std::span<const uint8_t> mask) {
  return ccc_impl(x, y, mask);
}

CccBreakdown ccc(std::span<const float> x, std::span<const float> y,
                 std::span<const uint8_t> mask) {
  return ccc_impl(x, y, mask);
}

EvalReport evaluate(const Tensor<float>& predictions, const VaSeries& labels) {
  ConcatEvaluator ev;
  ev.add(predictions, labels);
  return ev.report();
}

void ConcatEvaluator::add(const Tensor<float>& predictions, const VaSeries& labels) {
  check_rank(predictions, 2, "evaluate");
  if (predictions.extent(0) != labels.size() || predictions.extent(1) != 2) {
    throw ShapeError("evaluate: predictions " + shape_str(predictions.shape) + " vs labels [" +
                     std::to_string(labels.size()) + "x2]");
  }
  for (int64_t i = 0; i < labels.size(); ++i) {
    if (!labels.valid[static_cast<size_t>(i)]) continue;
    pred_v_.push_back(predictions(i, 0));
    pred_a_.push_back(predictions(i, 1));
    label_v_.push_back(labels.valence[static_cast<size_t>(i)]);
    label_a_.push_back(labels.arousal[static_cast<size_t>(i)]);
  }
}

EvalReport ConcatEvaluator::report() const {
  EvalReport r;
  r.valence = ccc(std::span<const float>(pred_v_), std::span<const float>(label_v_));
  r.arousal = ccc(std::span<const float>(pred_a_), std::span<const float>(label_a_));
  r.p_va = p_va(r.valence.ccc, r.arousal.ccc);
  r.n_valid = static_cast<int64_t>(pred_v_.size());
  return r;
}

FoldReport fold_report(const std::vector<FoldResult>& folds) {
  if (folds.empty()) throw Error("fold_report: no folds to report");
  return FoldReport{folds};
}

std::string FoldReport::to_text() const {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-8s  %-12s  %-12s  %-12s\n", "Fold", "Valence(CCC)",
                "Arousal(CCC)", "Average(CCC)");
  out += line;
  for (const auto& f : folds) {
    std::snprintf(line, sizeof(line), "%-8d  %-12.4f  %-12.4f  %-12.4f\n", f.fold,
                  f.report.valence.ccc, f.report.arousal.ccc, f.report.p_va);
    out += line;
  }
  std::snprintf(line, sizeof(line), "%-8s  %-12.4f  %-12.4f  %-12.4f\n", "baseline",
                kBaselineCccValence, kBaselineCccArousal,
                p_va(kBaselineCccValence, kBaselineCccArousal));
  out += line;
  return out;
}

std::string FoldReport::to_csv() const {
  std::string out = "fold,ccc_valence,ccc_arousal,p_va,n_valid\n";
  char line[160];
  for (const auto& f : folds) {
    std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%lld\n", f.fold, f.report.valence.ccc,
                  f.report.arousal.ccc, f.report.p_va, static_cast<long long>(f.report.n_valid));
    out += line;
  }
  std::snprintf(line, sizeof(line), "baseline,%.6f,%.6f,%.6f,0\n", kBaselineCccValence,
                kBaselineCccArousal, p_va(kBaselineCccValence, kBaselineCccArousal));
  out += line;
  return out;
}

}  // namespace mva
