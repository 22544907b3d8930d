#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mva/rng.hpp"
#include "mva/tensor.hpp"

namespace mva {

// Per-frame feature vectors for one video (precomputed upstream).
struct FeatureSequence {
  std::string video_id;
  int64_t n = 0;    // frame count
  int64_t dim = 0;  // feature width
  Tensor<float> data;  // [n x dim]
};

// Per-frame (valence, arousal) pairs in [-1,1] with a validity mask.
struct VaSeries {
  std::vector<float> valence;
  std::vector<float> arousal;
  std::vector<uint8_t> valid;

  int64_t size() const { return static_cast<int64_t>(valence.size()); }
};

// One window of a segmented video. Frames are 0-based internally;
// start + real_length never exceeds the video length.
struct SegmentRange {
  int64_t start = 0;        // first covered frame
  int64_t real_length = 0;  // un-padded frames in this window
};

// ---------------------------------------------------------------------------
// Segmentation: floor(n/s)+1 windows of width w every s frames, minus the
// windows whose start falls past the end; the final window is clipped and
// zero-padded with an explicit mask.
// ---------------------------------------------------------------------------

std::vector<SegmentRange> segment_video(int64_t n, int64_t w, int64_t s);

// Features of one segment, zero-padded to w rows, plus the pad mask.
struct SegmentTensor {
  Tensor<float> features;          // [w x dim]
  std::vector<uint8_t> real_mask;  // w entries; 1 = real frame
};

SegmentTensor slice_segment(const FeatureSequence& video, const SegmentRange& range, int64_t w);

// Arithmetic mean over all covering, non-padded segment positions.
// Every real frame must be covered by at least one segment.
Tensor<float> merge_overlapping_predictions(const std::vector<Tensor<float>>& segment_outputs,
                                            const std::vector<SegmentRange>& ranges, int64_t n,
                                            int64_t w);

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

// Feature file: magic "FVEC", u32 version=1, u32 n, u32 dim, then n*dim
// little-endian f32, row-major by frame.
void save_features(const std::string& path, const FeatureSequence& features);
FeatureSequence load_features(const std::string& path);

// Annotation CSV: header "valence,arousal", one row per frame. Values
// outside [-1,1] (the corpus uses -5 sentinels) mark the frame invalid.
// Extra rows are truncated to n with a warning on stderr; n < 0 keeps all.
void save_annotations(const std::string& path, const VaSeries& series);
VaSeries load_annotations(const std::string& path, int64_t n);

// ---------------------------------------------------------------------------
// Fold splitting
// ---------------------------------------------------------------------------

// Deterministic video-level k-fold assignment: fold_of[i] in [0, k).
// When official_val_ids is non-empty those videos form fold 0 exactly and
// the rest are dealt over folds 1..k-1.
std::vector<int> kfold_split(const std::vector<std::string>& video_ids, int k, uint64_t seed,
                             const std::vector<std::string>& official_val_ids = {});

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

struct SynthConfig {
  uint64_t seed = 42;
  int n_videos = 20;
  int64_t frames_min = 450;
  int64_t frames_max = 550;
  int64_t dim = 32;
  double feature_smoothing = 0.8;  // AR(1) coefficient of the feature paths
  double label_memory = 0.5;       // EMA coefficient feeding the label readout
  double readout_gain = 0.7;       // pre-tanh std of the readout
};

// Features are smooth seeded trajectories; labels are tanh of a fixed
// random linear readout of an exponential moving average of the features,
// so the mapping is causal and learnable. Writes features/<id>.fvec,
// annotations/<id>.csv, and manifest.txt under out_dir.
void generate_synthetic_dataset(const std::string& out_dir, const SynthConfig& cfg);

// Recomputes the generator's own labels from stored features (the oracle
// regressor; by construction it scores CCC = 1 on its own annotations).
VaSeries synth_oracle_predict(const FeatureSequence& features, const SynthConfig& cfg);

// ---------------------------------------------------------------------------
// Dataset directory loading
// ---------------------------------------------------------------------------

struct VideoData {
  FeatureSequence features;
  VaSeries labels;
};

struct Dataset {
  std::vector<VideoData> videos;
  std::vector<std::string> ids() const;
};

// Loads <dir>/features/*.fvec with matching <dir>/annotations/<id>.csv,
// sorted by id. require_labels=false tolerates missing annotation files.
Dataset load_dataset(const std::string& dir, bool require_labels = true);

}  // namespace mva
