#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mva/tensor.hpp"

namespace mva {

// Statistics behind one concordance value: population moments over the
// valid pairs, the Pearson correlation, and the CCC itself.
struct CccBreakdown {
  double mean_x = 0.0, mean_y = 0.0;
  double var_x = 0.0, var_y = 0.0;
  double cov_xy = 0.0;
  double pearson = 0.0;
  double ccc = 0.0;
  bool degenerate = false;  // zero denominator: both series constant, equal means
  int64_t n = 0;
};

// CCC over the valid pairs of two series. Moments are population
// (divide-by-N), accumulated with compensated 64-bit summation in a fixed
// order. mask may be empty (= all valid). Fewer than 2 valid pairs throws
// InsufficientDataError.
CccBreakdown ccc(std::span<const double> x, std::span<const double> y,
                 std::span<const uint8_t> mask = {});
CccBreakdown ccc(std::span<const float> x, std::span<const float> y,
                 std::span<const uint8_t> mask = {});

// Challenge score: mean of the two concordances.
inline double p_va(double ccc_valence, double ccc_arousal) {
  return (ccc_arousal + ccc_valence) / 2.0;
}

struct VaSeries;  // data_io.hpp

struct EvalReport {
  CccBreakdown valence;
  CccBreakdown arousal;
  double p_va = 0.0;
  int64_t n_valid = 0;
};

// Evaluation over one prediction series [n x 2] against labels.
EvalReport evaluate(const Tensor<float>& predictions, const VaSeries& labels);

// Accumulates (prediction, label) pairs across videos and scores the
// concatenation of all valid frames.
class ConcatEvaluator {
 public:
  void add(const Tensor<float>& predictions, const VaSeries& labels);
  EvalReport report() const;
  int64_t n_valid() const { return static_cast<int64_t>(pred_v_.size()); }

 private:
  std::vector<float> pred_v_, pred_a_, label_v_, label_a_;
};

// ---------------------------------------------------------------------------
// Fold reporting
// ---------------------------------------------------------------------------

struct FoldResult {
  int fold = 0;
  EvalReport report;
};

struct FoldReport {
  std::vector<FoldResult> folds;

  // Aligned text table with the per-fold rows plus the challenge baseline
  // row for comparison.
  std::string to_text() const;
  // CSV: fold,ccc_valence,ccc_arousal,p_va,n_valid
  std::string to_csv() const;
};

FoldReport fold_report(const std::vector<FoldResult>& folds);

// Challenge baseline scores used in the comparison row.
inline constexpr double kBaselineCccValence = 0.24;
inline constexpr double kBaselineCccArousal = 0.20;

}  // namespace mva
