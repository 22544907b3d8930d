#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mva/data_io.hpp"
#include "mva/layers.hpp"
#include "mva/metrics.hpp"
#include "mva/scan.hpp"
#include "mva/tensor.hpp"

namespace mva {

struct TrainConfig {
  int epochs = 50;
  double lr = 3e-4;
  int warmup_epochs = 5;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch = 8;  // segments per optimizer step
  uint64_t seed = 42;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables
  int workers = 1;

  void validate() const {
    if (epochs < 1 || lr < 0 || weight_decay < 0 || batch < 1 || workers < 1 || warmup_epochs < 1) {
      throw ConfigError("train: epochs/warmup/batch/workers must be positive, lr/weight_decay >= 0");
    }
  }
};

// Linear ramp from lr/warmup to lr across the warmup epochs, constant after.
// Short runs (epochs <= warmup) simply stop partway up the ramp.
inline double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < cfg.warmup_epochs) {
    return cfg.lr * static_cast<double>(epoch + 1) / static_cast<double>(cfg.warmup_epochs);
  }
  return cfg.lr;
}

// ---------------------------------------------------------------------------
// CCC loss: L = 1 - (CCC_v + CCC_a)/2 over the valid frames of a batch,
// with the analytical gradient of CCC w.r.t. the predictions.
//
// For x = pred, y = target, population moments over m valid frames:
//   dCCC/dx_i = 2/(m*denom^2) * ((y_i - my)*denom - 2*cov*((x_i - mx) + (mx - my)))
// ---------------------------------------------------------------------------

template <typename T>
struct CccLossResult {
  bool skip = false;  // degenerate batch (a target dimension is constant)
  double loss = 0.0;
  double ccc_v = 0.0, ccc_a = 0.0;
  Tensor<T> grad;  // dL/dpred, zero at invalid frames
};

template <typename T>
CccLossResult<T> ccc_loss(const Tensor<T>& pred, const Tensor<T>& target,
                          const std::vector<uint8_t>& valid) {
  check_rank(pred, 2, "ccc_loss");
  check_same_shape(pred, target, "ccc_loss");
  const int64_t rows = pred.extent(0);
  if (pred.extent(1) != 2) {
    throw ShapeError("ccc_loss: expected [m x 2] predictions, got " + shape_str(pred.shape));
  }
  if (!valid.empty() && static_cast<int64_t>(valid.size()) != rows) {
    throw ShapeError("ccc_loss: mask length " + std::to_string(valid.size()) + " vs rows " +
                     std::to_string(rows));
  }
  int64_t m = 0;
  for (int64_t i = 0; i < rows; ++i) {
    if (valid.empty() || valid[static_cast<size_t>(i)]) ++m;
  }
  if (m < 2) {
    throw InsufficientDataError("ccc_loss: need >= 2 valid frames per batch, got " +
                                std::to_string(m));
  }
  CccLossResult<T> res;
  res.grad = Tensor<T>(pred.shape);
  double ccc_per_dim[2] = {0.0, 0.0};
  for (int64_t dim = 0; dim < 2; ++dim) {
    double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (int64_t i = 0; i < rows; ++i) {
      if (!valid.empty() && !valid[static_cast<size_t>(i)]) continue;
      const double x = static_cast<double>(pred(i, dim));
      const double y = static_cast<double>(target(i, dim));
      sx += x;
      sy += y;
      sxx += x * x;
      syy += y * y;
      sxy += x * y;
    }
    const double dm = static_cast<double>(m);
    const double mx = sx / dm, my = sy / dm;
    const double var_y = std::max(0.0, syy / dm - my * my);
    if (var_y <= 0.0) {
      res.skip = true;  // constant targets: CCC gradient is uninformative
      return res;
    }
    const double var_x = std::max(0.0, sxx / dm - mx * mx);
    const double cov = sxy / dm - mx * my;
    const double gap = mx - my;
    const double denom = var_x + var_y + gap * gap;
    const double ccc = 2.0 * cov / denom;
    ccc_per_dim[dim] = ccc;
    const double scale = 2.0 / (dm * denom * denom);
    for (int64_t i = 0; i < rows; ++i) {
      if (!valid.empty() && !valid[static_cast<size_t>(i)]) continue;
      const double x = static_cast<double>(pred(i, dim));
      const double y = static_cast<double>(target(i, dim));
      const double dccc = scale * ((y - my) * denom - 2.0 * cov * ((x - mx) + gap));
      // L = 1 - (ccc_v + ccc_a)/2
      res.grad(i, dim) = static_cast<T>(-0.5 * dccc);
    }
  }
  res.ccc_v = ccc_per_dim[0];
  res.ccc_a = ccc_per_dim[1];
  res.loss = 1.0 - (res.ccc_v + res.ccc_a) / 2.0;
  return res;
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay and bias correction. Parameter order is
// the ModelParams enumeration order, so updates are deterministic.
// ---------------------------------------------------------------------------

class AdamW {
 public:
  AdamW(ModelParams<float>& params, const TrainConfig& cfg);

  // One update with the given step-size. Throws NumericError naming the
  // tensor if any gradient is non-finite.
  void step(ModelParams<float>& params, double lr_t);

  int64_t t() const { return t_; }
  void set_t(int64_t t) { t_ = t; }

  // Optimizer state as named tensors ("opt.m.<param>", "opt.v.<param>").
  std::vector<std::pair<std::string, Tensor<float>>> state_tensors() const;
  void load_state(const std::vector<std::pair<std::string, Tensor<float>>>& tensors);

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor<float>> m_, v_;
};

// Scales all gradients so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(ModelParams<float>& params, double max_norm);

// ---------------------------------------------------------------------------
// fit: the epoch loop of the training protocol.
// ---------------------------------------------------------------------------

struct FitOptions {
  ModelConfig model;
  TrainConfig train;
  int64_t window = 300;
  int64_t stride = 200;
  ScanVariant scan_variant = ScanVariant::Sequential;
  std::string out_dir;                 // receives log + checkpoints
  std::string resume_from;             // optional checkpoint_last path
  bool quiet = false;                  // suppress per-epoch stderr progress
  std::map<std::string, std::string> extra_config;  // merged into checkpoints
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double ccc_v = 0.0, ccc_a = 0.0, p_va = 0.0;
};

struct FitResult {
  double best_p_va = -2.0;
  double best_ccc_v = 0.0, best_ccc_a = 0.0;
  int best_epoch = -1;
  std::vector<EpochLog> log;
  std::string best_checkpoint;  // path
  std::string last_checkpoint;  // path
  std::string log_path;
};

// Trains on train_videos, validates on val_videos after every epoch,
// retains the best-P_VA checkpoint. Log rows: epoch,loss,lr,ccc_v,ccc_a,p_va.
FitResult fit(const Dataset& dataset, const std::vector<int>& fold_of, int val_fold,
              const FitOptions& options);

// Segment-level prediction for a whole video, merged over overlaps.
Tensor<float> predict_video(const ModelParams<float>& params, const FeatureSequence& video,
                            int64_t window, int64_t stride, ScanVariant variant);

}  // namespace mva
