#pragma once

#include <cstdint>
#include <string>

#include "mva/layers.hpp"
#include "mva/scan.hpp"
#include "mva/training.hpp"

namespace mva {

// Flat key = value run configuration. File values override the defaults,
// command-line overrides win over the file. Unknown keys are rejected.
struct RunConfig {
  std::string data_dir;
  std::string out_dir;
  int fold = 0;
  int k_folds = 6;
  int64_t window = 300;
  int64_t stride = 200;
  int64_t in_dim = 1024;
  int64_t hidden = 256;
  int tcn_layers = 4;
  int64_t kernel_size = 15;
  std::string dilations = "1,2,4,8";
  int mamba_layers = 4;
  int64_t state_dim = 8;
  int64_t conv_width = 4;
  int64_t expand = 1;
  double dropout = 0.3;
  int epochs = 50;
  double lr = 3e-4;
  int warmup_epochs = 5;
  double weight_decay = 1e-3;
  int batch = 8;
  double clip_norm = 1.0;
  int workers = 1;
  uint64_t seed = 42;
  std::string scan_variant = "sequential";
  std::string official_val_list;  // optional path; its videos form fold 0
  std::string resume;             // optional checkpoint to continue from

  ModelConfig model_config() const;
  TrainConfig train_config() const;
  ScanVariant variant() const;
};

// Throws ConfigError on unknown keys or unparseable values.
void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses "key = value" lines; '#' starts a comment.
RunConfig load_run_config(const std::string& path);
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin);

// All keys in a fixed order; reloading the output reproduces the config.
std::string serialize_config(const RunConfig& cfg);

}  // namespace mva
