#include "mva/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mva/checkpoint.hpp"
#include "mva/errors.hpp"
#include "mva/rng.hpp"

namespace fs = std::filesystem;

namespace mva {

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

AdamW::AdamW(ModelParams<float>& params, const TrainConfig& cfg)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps), weight_decay_(cfg.weight_decay) {
  params.for_each([this](const std::string& name, Tensor<float>& t) {
    names_.push_back(name);
    m_.push_back(Tensor<float>(t.shape));
    v_.push_back(Tensor<float>(t.shape));
  });
}

void AdamW::step(ModelParams<float>& params, double lr_t) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double decay_factor = 1.0 - lr_t * weight_decay_;
  size_t idx = 0;
  params.for_each([&](const std::string& name, Tensor<float>& t) {
    if (!t.has_grad()) throw Error("adamw: tensor '" + name + "' has no gradient buffer");
    Tensor<float>& m = m_[idx];
    Tensor<float>& v = v_[idx];
    ++idx;
    float* p = t.data.data();
    float* g = t.grad.data();
    const int64_t n = t.numel();
    for (int64_t i = 0; i < n; ++i) {
      const double gi = static_cast<double>(g[i]);
      if (!std::isfinite(gi)) {
        throw NumericError("adamw: non-finite gradient in tensor '" + name + "' at index " +
                           std::to_string(i));
      }
      const double mi = beta1_ * static_cast<double>(m.data[static_cast<size_t>(i)]) + (1.0 - beta1_) * gi;
      const double vi = beta2_ * static_cast<double>(v.data[static_cast<size_t>(i)]) + (1.0 - beta2_) * gi * gi;
      m.data[static_cast<size_t>(i)] = static_cast<float>(mi);
      v.data[static_cast<size_t>(i)] = static_cast<float>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      // decoupled decay applied multiplicatively alongside the Adam update
      const double updated = static_cast<double>(p[i]) * decay_factor -
                             lr_t * m_hat / (std::sqrt(v_hat) + eps_);
      p[i] = static_cast<float>(updated);
    }
  });
}

std::vector<std::pair<std::string, Tensor<float>>> AdamW::state_tensors() const {
  std::vector<std::pair<std::string, Tensor<float>>> out;
  for (size_t i = 0; i < names_.size(); ++i) {
    out.emplace_back("opt.m." + names_[i], m_[i]);
    out.emplace_back("opt.v." + names_[i], v_[i]);
  }
  return out;
}

void AdamW::load_state(const std::vector<std::pair<std::string, Tensor<float>>>& tensors) {
  auto find = [&tensors](const std::string& name) -> const Tensor<float>* {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  };
  for (size_t i = 0; i < names_.size(); ++i) {
    const Tensor<float>* m = find("opt.m." + names_[i]);
    const Tensor<float>* v = find("opt.v." + names_[i]);
    if (!m || !v) throw ParseError("checkpoint is missing optimizer state for '" + names_[i] + "'");
    if (m->shape != m_[i].shape || v->shape != v_[i].shape) {
      throw ShapeError("optimizer state shape mismatch for '" + names_[i] + "'");
    }
    m_[i].data = m->data;
    v_[i].data = v->data;
  }
}

double clip_global_norm(ModelParams<float>& params, double max_norm) {
  double sq = 0.0;
  params.for_each([&sq](const std::string&, Tensor<float>& t) {
    for (float g : t.grad) sq += static_cast<double>(g) * static_cast<double>(g);
  });
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    params.for_each([scale](const std::string&, Tensor<float>& t) {
      for (float& g : t.grad) g = static_cast<float>(static_cast<double>(g) * scale);
    });
  }
  return norm;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

namespace {

struct TrainSegment {
  int video = 0;
  SegmentRange range;
};

struct SegmentBatchData {
  Tensor<float> pred;              // concatenated [sum_w x 2]
  Tensor<float> target;
  std::vector<uint8_t> valid;
  std::vector<ModelWorkspace<float>> ws;
  std::vector<int64_t> offsets;  // row offset per segment
};

Checkpoint make_checkpoint(const ModelParams<float>& params, const AdamW& opt,
                           const FitOptions& options, int epoch, int val_fold,
                           const FitResult& result) {
  std::map<std::string, std::string> extra = options.extra_config;
  char buf[64];
  extra["train.epoch"] = std::to_string(epoch);
  extra["train.step"] = std::to_string(opt.t());
  extra["train.seed"] = std::to_string(options.train.seed);
  extra["train.best_epoch"] = std::to_string(result.best_epoch);
  std::snprintf(buf, sizeof(buf), "%.17g", result.best_p_va);
  extra["train.best_p_va"] = buf;
  std::snprintf(buf, sizeof(buf), "%.17g", result.best_ccc_v);
  extra["train.best_ccc_v"] = buf;
  std::snprintf(buf, sizeof(buf), "%.17g", result.best_ccc_a);
  extra["train.best_ccc_a"] = buf;
  extra["data.window"] = std::to_string(options.window);
  extra["data.stride"] = std::to_string(options.stride);
  extra["data.val_fold"] = std::to_string(val_fold);
  return pack_model(params, extra, opt.state_tensors());
}

}  // namespace

Tensor<float> predict_video(const ModelParams<float>& params, const FeatureSequence& video,
                            int64_t window, int64_t stride, ScanVariant variant) {
  const auto ranges = segment_video(video.n, window, stride);
  std::vector<Tensor<float>> outputs;
  outputs.reserve(ranges.size());
  for (const auto& range : ranges) {
    SegmentTensor seg = slice_segment(video, range, window);
    outputs.push_back(model_forward(params, seg.features, false, nullptr, variant));
  }
  return merge_overlapping_predictions(outputs, ranges, video.n, window);
}

FitResult fit(const Dataset& dataset, const std::vector<int>& fold_of, int val_fold,
              const FitOptions& options) {
  options.model.validate();
  options.train.validate();
  if (dataset.videos.empty()) throw ConfigError("fit: empty dataset");
  if (fold_of.size() != dataset.videos.size()) {
    throw ConfigError("fit: fold assignment size mismatch");
  }
#ifdef _OPENMP
  omp_set_num_threads(options.train.workers);
#endif
  std::vector<int> train_videos, val_videos;
  for (size_t i = 0; i < dataset.videos.size(); ++i) {
    (fold_of[i] == val_fold ? val_videos : train_videos).push_back(static_cast<int>(i));
  }
  if (train_videos.empty()) throw ConfigError("fit: no training videos outside fold " + std::to_string(val_fold));
  if (val_videos.empty()) throw ConfigError("fit: no validation videos in fold " + std::to_string(val_fold));

  std::vector<TrainSegment> segments;
  for (int vi : train_videos) {
    for (const auto& range : segment_video(dataset.videos[static_cast<size_t>(vi)].features.n,
                                           options.window, options.stride)) {
      segments.push_back({vi, range});
    }
  }

  const TrainConfig& tc = options.train;
  fs::create_directories(options.out_dir);
  FitResult result;
  result.best_checkpoint = (fs::path(options.out_dir) / "checkpoint_best.mva").string();
  result.last_checkpoint = (fs::path(options.out_dir) / "checkpoint_last.mva").string();
  result.log_path = (fs::path(options.out_dir) / "train_log.csv").string();

  ModelParams<float> params = [&] {
    Rng init_rng = stream(tc.seed, "init");
    return ModelParams<float>::init(options.model, init_rng);
  }();
  AdamW opt(params, tc);
  int start_epoch = 0;
  if (!options.resume_from.empty()) {
    Checkpoint ckpt = load_checkpoint(options.resume_from);
    params = unpack_model(ckpt);
    opt = AdamW(params, tc);
    opt.load_state(ckpt.tensors);
    opt.set_t(std::stoll(ckpt.config.at("train.step")));
    start_epoch = std::stoi(ckpt.config.at("train.epoch")) + 1;
    result.best_epoch = std::stoi(ckpt.config.at("train.best_epoch"));
    result.best_p_va = std::stod(ckpt.config.at("train.best_p_va"));
    result.best_ccc_v = std::stod(ckpt.config.at("train.best_ccc_v"));
    result.best_ccc_a = std::stod(ckpt.config.at("train.best_ccc_a"));
  }
  params.ensure_grads();

  std::ofstream log(result.log_path);
  if (!log) throw IoError("cannot open training log for writing: " + result.log_path);
  log << "epoch,loss,lr,ccc_v,ccc_a,p_va\n";

  const int64_t w = options.window;
  for (int epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    const double lr_t = lr_schedule(epoch, tc);
    std::vector<size_t> order(segments.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = stream(tc.seed, "shuffle", static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.below(i))]);
    }

    double loss_sum = 0.0;
    int64_t n_batches = 0, n_skipped = 0;
    const size_t batch_size = static_cast<size_t>(tc.batch);
    for (size_t begin = 0, step = 0; begin < order.size(); begin += batch_size, ++step) {
      const size_t end = std::min(begin + batch_size, order.size());
      const size_t count = end - begin;
      SegmentBatchData batch;
      batch.ws.assign(count, ModelWorkspace<float>{});
      batch.offsets.assign(count, 0);
      batch.pred = Tensor<float>({static_cast<int64_t>(count) * w, 2});
      batch.target = Tensor<float>({static_cast<int64_t>(count) * w, 2});
      batch.valid.assign(static_cast<size_t>(static_cast<int64_t>(count) * w), 0);
      for (size_t si = 0; si < count; ++si) {
        const TrainSegment& seg = segments[order[begin + si]];
        const VideoData& video = dataset.videos[static_cast<size_t>(seg.video)];
        SegmentTensor st = slice_segment(video.features, seg.range, w);
        Rng drop_rng = stream(tc.seed, "dropout", static_cast<uint64_t>(epoch),
                              static_cast<uint64_t>(step), static_cast<uint64_t>(si));
        Tensor<float> pred =
            model_forward(params, st.features, true, &drop_rng, options.scan_variant, &batch.ws[si]);
        const int64_t off = static_cast<int64_t>(si) * w;
        batch.offsets[si] = off;
        for (int64_t t = 0; t < w; ++t) {
          batch.pred(off + t, 0) = pred(t, 0);
          batch.pred(off + t, 1) = pred(t, 1);
          const int64_t frame = seg.range.start + t;
          const bool real = st.real_mask[static_cast<size_t>(t)] != 0;
          const bool labeled = real && video.labels.valid[static_cast<size_t>(frame)] != 0;
          if (labeled) {
            batch.target(off + t, 0) = video.labels.valence[static_cast<size_t>(frame)];
            batch.target(off + t, 1) = video.labels.arousal[static_cast<size_t>(frame)];
            batch.valid[static_cast<size_t>(off + t)] = 1;
          }
        }
      }
      CccLossResult<float> loss;
      try {
        loss = ccc_loss(batch.pred, batch.target, batch.valid);
      } catch (const InsufficientDataError&) {
        ++n_skipped;
        continue;
      }
      if (loss.skip) {
        ++n_skipped;
        continue;
      }
      if (!std::isfinite(loss.loss)) {
        throw NumericError("fit: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step));
      }
      params.zero_grads();
      for (size_t si = 0; si < count; ++si) {
        Tensor<float> gseg({w, 2});
        for (int64_t t = 0; t < w; ++t) {
          gseg(t, 0) = loss.grad(batch.offsets[si] + t, 0);
          gseg(t, 1) = loss.grad(batch.offsets[si] + t, 1);
        }
        model_backward(params, batch.ws[si], gseg);
      }
      clip_global_norm(params, tc.clip_norm);
      opt.step(params, lr_t);
      loss_sum += loss.loss;
      ++n_batches;
    }

    // validation on merged per-frame predictions
    ConcatEvaluator ev;
    for (int vi : val_videos) {
      const VideoData& video = dataset.videos[static_cast<size_t>(vi)];
      Tensor<float> merged =
          predict_video(params, video.features, options.window, options.stride, options.scan_variant);
      ev.add(merged, video.labels);
    }
    const EvalReport report = ev.report();

    EpochLog row;
    row.epoch = epoch;
    row.loss = n_batches > 0 ? loss_sum / static_cast<double>(n_batches) : 0.0;
    row.lr = lr_t;
    row.ccc_v = report.valence.ccc;
    row.ccc_a = report.arousal.ccc;
    row.p_va = report.p_va;
    result.log.push_back(row);
    char line[160];
    std::snprintf(line, sizeof(line), "%d,%.8f,%.8g,%.6f,%.6f,%.6f\n", row.epoch, row.loss, row.lr,
                  row.ccc_v, row.ccc_a, row.p_va);
    log << line;
    log.flush();
    if (!options.quiet) {
      std::cerr << "epoch " << epoch << ": loss " << row.loss << " ccc_v " << row.ccc_v
                << " ccc_a " << row.ccc_a << " p_va " << row.p_va;
      if (n_skipped > 0) std::cerr << " (skipped " << n_skipped << " degenerate batches)";
      std::cerr << "\n";
    }

    if (report.p_va > result.best_p_va) {
      result.best_p_va = report.p_va;
      result.best_ccc_v = report.valence.ccc;
      result.best_ccc_a = report.arousal.ccc;
      result.best_epoch = epoch;
      save_checkpoint(result.best_checkpoint, make_checkpoint(params, opt, options, epoch, val_fold, result));
    }
    save_checkpoint(result.last_checkpoint, make_checkpoint(params, opt, options, epoch, val_fold, result));
  }
  return result;
}

}  // namespace mva
