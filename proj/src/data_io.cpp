#include "mva/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "mva/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace fs = std::filesystem;

namespace mva {

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

std::vector<SegmentRange> segment_video(int64_t n, int64_t w, int64_t s) {
  if (n < 1) throw ConfigError("segment_video: need n >= 1 frames, got " + std::to_string(n));
  if (w < 1 || s < 1) throw ConfigError("segment_video: window and stride must be >= 1");
  if (s > w) {
    throw ConfigError("segment_video: stride " + std::to_string(s) + " > window " +
                      std::to_string(w) + " would leave frames uncovered");
  }
  const int64_t formula_count = n / s + 1;
  std::vector<SegmentRange> ranges;
  for (int64_t i = 0; i < formula_count; ++i) {
    const int64_t start = i * s;  // 0-based; the i-th window covers [i*s, i*s + w)
    if (start >= n) continue;     // window starts past the last frame
    ranges.push_back({start, std::min(w, n - start)});
  }
  return ranges;
}

SegmentTensor slice_segment(const FeatureSequence& video, const SegmentRange& range, int64_t w) {
  SegmentTensor out;
  out.features = Tensor<float>({w, video.dim});
  out.real_mask.assign(static_cast<size_t>(w), 0);
  for (int64_t t = 0; t < range.real_length; ++t) {
    out.real_mask[static_cast<size_t>(t)] = 1;
    std::memcpy(&out.features(t, 0), &video.data(range.start + t, 0),
                static_cast<size_t>(video.dim) * sizeof(float));
  }
  return out;
}

Tensor<float> merge_overlapping_predictions(const std::vector<Tensor<float>>& segment_outputs,
                                            const std::vector<SegmentRange>& ranges, int64_t n,
                                            int64_t w) {
  if (segment_outputs.size() != ranges.size()) {
    throw ShapeError("merge: " + std::to_string(segment_outputs.size()) + " outputs vs " +
                     std::to_string(ranges.size()) + " ranges");
  }
  std::vector<double> acc_v(static_cast<size_t>(n), 0.0), acc_a(static_cast<size_t>(n), 0.0);
  std::vector<int64_t> count(static_cast<size_t>(n), 0);
  for (size_t si = 0; si < ranges.size(); ++si) {
    const auto& out = segment_outputs[si];
    if (out.rank() != 2 || out.extent(0) != w || out.extent(1) != 2) {
      throw ShapeError("merge: segment output " + shape_str(out.shape) + " vs expected [" +
                       std::to_string(w) + "x2]");
    }
    for (int64_t t = 0; t < ranges[si].real_length; ++t) {
      const int64_t frame = ranges[si].start + t;
      acc_v[static_cast<size_t>(frame)] += static_cast<double>(out(t, 0));
      acc_a[static_cast<size_t>(frame)] += static_cast<double>(out(t, 1));
      count[static_cast<size_t>(frame)] += 1;
    }
  }
  Tensor<float> merged({n, 2});
  for (int64_t f = 0; f < n; ++f) {
    if (count[static_cast<size_t>(f)] == 0) {
      throw Error("merge: frame " + std::to_string(f) + " covered by no segment");
    }
    merged(f, 0) = static_cast<float>(acc_v[static_cast<size_t>(f)] / static_cast<double>(count[static_cast<size_t>(f)]));
    merged(f, 1) = static_cast<float>(acc_a[static_cast<size_t>(f)] / static_cast<double>(count[static_cast<size_t>(f)]));
  }
  return merged;
}

// ---------------------------------------------------------------------------
// Feature files
// ---------------------------------------------------------------------------

namespace {

constexpr char kFvecMagic[4] = {'F', 'V', 'E', 'C'};

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t read_u32(std::ifstream& f, const char* what) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  if (!f) throw ParseError(std::string("feature file truncated while reading ") + what);
  return v;
}

}  // namespace

void save_features(const std::string& path, const FeatureSequence& features) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open feature file for writing: " + path);
  f.write(kFvecMagic, 4);
  write_u32(f, 1);
  write_u32(f, static_cast<uint32_t>(features.n));
  write_u32(f, static_cast<uint32_t>(features.dim));
  f.write(reinterpret_cast<const char*>(features.data.data.data()),
          static_cast<std::streamsize>(features.data.numel() * sizeof(float)));
  if (!f) throw IoError("short write to feature file: " + path);
}

FeatureSequence load_features(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open feature file: " + path);
  char magic[4] = {};
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kFvecMagic, 4) != 0) {
    throw ParseError("bad magic in feature file (expected FVEC): " + path);
  }
  const uint32_t version = read_u32(f, "version");
  if (version != 1) throw ParseError("unsupported feature file version " + std::to_string(version));
  FeatureSequence out;
  out.n = read_u32(f, "frame count");
  out.dim = read_u32(f, "feature dim");
  if (out.n < 1 || out.dim < 1) throw ParseError("feature file declares empty payload: " + path);
  out.data = Tensor<float>({out.n, out.dim});
  f.read(reinterpret_cast<char*>(out.data.data.data()),
         static_cast<std::streamsize>(out.data.numel() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(out.data.numel() * sizeof(float))) {
    throw ParseError("feature payload truncated: expected " +
                     std::to_string(out.data.numel() * sizeof(float)) + " bytes in " + path);
  }
  for (int64_t i = 0; i < out.n; ++i) {
    for (int64_t j = 0; j < out.dim; ++j) {
      if (!std::isfinite(out.data(i, j))) {
        throw ParseError("non-finite feature value at frame " + std::to_string(i) + " in " + path);
      }
    }
  }
  out.video_id = fs::path(path).stem().string();
  return out;
}

// ---------------------------------------------------------------------------
// Annotations
// ---------------------------------------------------------------------------

void save_annotations(const std::string& path, const VaSeries& series) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open annotation file for writing: " + path);
  f << "valence,arousal\n";
  char line[80];
  for (int64_t i = 0; i < series.size(); ++i) {
    if (series.valid[static_cast<size_t>(i)]) {
      // %.9g round-trips binary32 exactly
      std::snprintf(line, sizeof(line), "%.9g,%.9g\n", series.valence[static_cast<size_t>(i)],
                    series.arousal[static_cast<size_t>(i)]);
    } else {
      std::snprintf(line, sizeof(line), "-5,-5\n");
    }
    f << line;
  }
}

VaSeries load_annotations(const std::string& path, int64_t n) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open annotation file: " + path);
  std::string line;
  if (!std::getline(f, line)) throw ParseError("empty annotation file: " + path);
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  if (line != "valence,arousal") {
    throw ParseError("annotation header must be 'valence,arousal', got '" + line + "' in " + path);
  }
  VaSeries out;
  int64_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    float v = 0.0f, a = 0.0f;
    char trailing = 0;
    if (std::sscanf(line.c_str(), "%f,%f%c", &v, &a, &trailing) != 2) {
      throw ParseError("unparseable annotation row at line " + std::to_string(line_no) + " in " +
                       path + ": '" + line + "'");
    }
    const bool ok = v >= -1.0f && v <= 1.0f && a >= -1.0f && a <= 1.0f;
    out.valence.push_back(ok ? v : 0.0f);
    out.arousal.push_back(ok ? a : 0.0f);
    out.valid.push_back(ok ? 1 : 0);
  }
  if (out.size() == 0) throw ParseError("annotation file has no rows: " + path);
  if (n >= 0 && out.size() != n) {
    if (out.size() > n) {
      std::cerr << "warning: " << path << " has " << out.size() << " rows for " << n
                << " frames; truncating\n";
      out.valence.resize(static_cast<size_t>(n));
      out.arousal.resize(static_cast<size_t>(n));
      out.valid.resize(static_cast<size_t>(n));
    } else {
      throw ParseError("annotation file " + path + " has " + std::to_string(out.size()) +
                       " rows but the video has " + std::to_string(n) + " frames");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fold splitting
// ---------------------------------------------------------------------------

std::vector<int> kfold_split(const std::vector<std::string>& video_ids, int k, uint64_t seed,
                             const std::vector<std::string>& official_val_ids) {
  if (k < 2) throw ConfigError("kfold_split: need k >= 2, got " + std::to_string(k));
  if (static_cast<int>(video_ids.size()) < k) {
    throw ConfigError("kfold_split: " + std::to_string(video_ids.size()) + " videos < " +
                      std::to_string(k) + " folds");
  }
  std::vector<int> assignment(video_ids.size(), -1);
  std::set<std::string> official(official_val_ids.begin(), official_val_ids.end());
  std::vector<size_t> rest;
  for (size_t i = 0; i < video_ids.size(); ++i) {
    if (official.count(video_ids[i])) {
      assignment[i] = 0;
    } else {
      rest.push_back(i);
    }
  }
  Rng rng = stream(seed, "kfold");
  for (size_t i = rest.size(); i > 1; --i) {
    std::swap(rest[i - 1], rest[static_cast<size_t>(rng.below(i))]);
  }
  const int first_fold = official.empty() ? 0 : 1;
  const int fold_span = k - first_fold;
  for (size_t j = 0; j < rest.size(); ++j) {
    assignment[rest[j]] = first_fold + static_cast<int>(j % static_cast<size_t>(fold_span));
  }
  return assignment;
}

// ---------------------------------------------------------------------------
// Synthetic dataset
// ---------------------------------------------------------------------------

namespace {

std::vector<double> synth_readout(const SynthConfig& cfg, char which) {
  Rng rng = stream(cfg.seed, which == 'v' ? "synth.readout.v" : "synth.readout.a");
  std::vector<double> w(static_cast<size_t>(cfg.dim));
  for (auto& x : w) x = rng.normal();
  // normalize so the EMA readout has roughly unit scale before the gain
  double norm = 0.0;
  for (double x : w) norm += x * x;
  norm = std::sqrt(norm / static_cast<double>(cfg.dim));
  for (auto& x : w) x /= norm;
  return w;
}

uint64_t digest_doubles(const std::vector<double>& values) {
  uint64_t h = 1469598103934665603ull;
  for (double v : values) {
    uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xFF;
      h *= 1099511628211ull;
    }
  }
  return h;
}

FeatureSequence synth_features(const SynthConfig& cfg, int video_index) {
  Rng rng = stream(cfg.seed, "synth.features", static_cast<uint64_t>(video_index));
  const int64_t n = cfg.frames_min + static_cast<int64_t>(rng.below(
                        static_cast<uint64_t>(cfg.frames_max - cfg.frames_min + 1)));
  FeatureSequence fs;
  char id[32];
  std::snprintf(id, sizeof(id), "synth%03d", video_index);
  fs.video_id = id;
  fs.n = n;
  fs.dim = cfg.dim;
  fs.data = Tensor<float>({n, cfg.dim});
  // stationary AR(1) per dimension: smooth, unit variance
  const double phi = cfg.feature_smoothing;
  const double innov = std::sqrt(1.0 - phi * phi);
  std::vector<double> state(static_cast<size_t>(cfg.dim));
  for (auto& s : state) s = rng.normal();
  for (int64_t t = 0; t < n; ++t) {
    for (int64_t j = 0; j < cfg.dim; ++j) {
      if (t > 0) state[static_cast<size_t>(j)] = phi * state[static_cast<size_t>(j)] + innov * rng.normal();
      fs.data(t, j) = static_cast<float>(state[static_cast<size_t>(j)]);
    }
  }
  return fs;
}

}  // namespace

VaSeries synth_oracle_predict(const FeatureSequence& features, const SynthConfig& cfg) {
  const auto wv = synth_readout(cfg, 'v');
  const auto wa = synth_readout(cfg, 'a');
  VaSeries out;
  const double beta = cfg.label_memory;
  // the EMA shrinks the unit-variance features; rescale before the gain
  const double ema_scale = std::sqrt((1.0 - beta) / (1.0 + beta));
  std::vector<double> ema(static_cast<size_t>(features.dim), 0.0);
  for (int64_t t = 0; t < features.n; ++t) {
    double dot_v = 0.0, dot_a = 0.0;
    for (int64_t j = 0; j < features.dim; ++j) {
      ema[static_cast<size_t>(j)] = beta * ema[static_cast<size_t>(j)] +
                                    (1.0 - beta) * static_cast<double>(features.data(t, j));
      dot_v += wv[static_cast<size_t>(j)] * ema[static_cast<size_t>(j)];
      dot_a += wa[static_cast<size_t>(j)] * ema[static_cast<size_t>(j)];
    }
    out.valence.push_back(static_cast<float>(std::tanh(cfg.readout_gain * dot_v / ema_scale)));
    out.arousal.push_back(static_cast<float>(std::tanh(cfg.readout_gain * dot_a / ema_scale)));
    out.valid.push_back(1);
  }
  return out;
}

void generate_synthetic_dataset(const std::string& out_dir, const SynthConfig& cfg) {
  fs::create_directories(fs::path(out_dir) / "features");
  fs::create_directories(fs::path(out_dir) / "annotations");
  for (int v = 0; v < cfg.n_videos; ++v) {
    FeatureSequence feats = synth_features(cfg, v);
    save_features((fs::path(out_dir) / "features" / (feats.video_id + ".fvec")).string(), feats);
    // labels come from the binary32 feature values that were just written,
    // so the oracle reproduces them exactly from disk
    VaSeries labels = synth_oracle_predict(feats, cfg);
    save_annotations((fs::path(out_dir) / "annotations" / (feats.video_id + ".csv")).string(),
                     labels);
  }
  auto wv = synth_readout(cfg, 'v');
  auto wa = synth_readout(cfg, 'a');
  std::vector<double> all = wv;
  all.insert(all.end(), wa.begin(), wa.end());
  std::ofstream mf(fs::path(out_dir) / "manifest.txt");
  if (!mf) throw IoError("cannot write manifest under " + out_dir);
  char buf[128];
  mf << "format = synthetic-va.v1\n";
  mf << "seed = " << cfg.seed << "\n";
  mf << "n_videos = " << cfg.n_videos << "\n";
  mf << "frames_min = " << cfg.frames_min << "\n";
  mf << "frames_max = " << cfg.frames_max << "\n";
  mf << "dim = " << cfg.dim << "\n";
  std::snprintf(buf, sizeof(buf), "feature_smoothing = %.17g\n", cfg.feature_smoothing);
  mf << buf;
  std::snprintf(buf, sizeof(buf), "label_memory = %.17g\n", cfg.label_memory);
  mf << buf;
  std::snprintf(buf, sizeof(buf), "readout_gain = %.17g\n", cfg.readout_gain);
  mf << buf;
  std::snprintf(buf, sizeof(buf), "readout_digest = %016llx\n",
                static_cast<unsigned long long>(digest_doubles(all)));
  mf << buf;
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

std::vector<std::string> Dataset::ids() const {
  std::vector<std::string> out;
  out.reserve(videos.size());
  for (const auto& v : videos) out.push_back(v.features.video_id);
  return out;
}

Dataset load_dataset(const std::string& dir, bool require_labels) {
  const fs::path feat_dir = fs::path(dir) / "features";
  const fs::path ann_dir = fs::path(dir) / "annotations";
  if (!fs::is_directory(feat_dir)) {
    throw IoError("feature directory does not exist: " + feat_dir.string());
  }
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(feat_dir)) {
    if (entry.path().extension() == ".fvec") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw IoError("no .fvec files under " + feat_dir.string());
  Dataset ds;
  for (const auto& id : ids) {
    VideoData vd;
    vd.features = load_features((feat_dir / (id + ".fvec")).string());
    const fs::path ann = ann_dir / (id + ".csv");
    if (fs::exists(ann)) {
      vd.labels = load_annotations(ann.string(), vd.features.n);
    } else if (require_labels) {
      throw IoError("missing annotation file: " + ann.string());
    }
    ds.videos.push_back(std::move(vd));
  }
  return ds;
}

}  // namespace mva
