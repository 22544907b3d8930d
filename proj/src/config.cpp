#include "mva/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mva/errors.hpp"

namespace mva {

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.tcn.in_dim = in_dim;
  m.tcn.hidden = hidden;
  m.tcn.n_layers = tcn_layers;
  m.tcn.kernel_size = kernel_size;
  m.tcn.dilations.clear();
  std::istringstream dil(dilations);
  std::string tok;
  while (std::getline(dil, tok, ',')) {
    if (!tok.empty()) m.tcn.dilations.push_back(std::stoll(tok));
  }
  m.tcn.dropout = dropout;
  m.mamba.d_model = hidden;
  m.mamba.n_layers = mamba_layers;
  m.mamba.state_dim = state_dim;
  m.mamba.conv_width = conv_width;
  m.mamba.expand = expand;
  m.validate();
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.epochs = epochs;
  t.lr = lr;
  t.warmup_epochs = warmup_epochs;
  t.weight_decay = weight_decay;
  t.batch = batch;
  t.seed = seed;
  t.clip_norm = clip_norm;
  t.workers = workers;
  t.validate();
  return t;
}

ScanVariant RunConfig::variant() const {
  if (scan_variant == "sequential") return ScanVariant::Sequential;
  if (scan_variant == "parallel") return ScanVariant::Parallel;
  throw ConfigError("scan_variant must be 'sequential' or 'parallel', got '" + scan_variant + "'");
}

namespace {

int64_t parse_i64(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const int64_t v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs an integer, got '" + value + "'");
  }
}

double parse_f64(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' needs a number, got '" + value + "'");
  }
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  size_t e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "data_dir") cfg.data_dir = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "fold") cfg.fold = static_cast<int>(parse_i64(key, value));
  else if (key == "k_folds") cfg.k_folds = static_cast<int>(parse_i64(key, value));
  else if (key == "window") cfg.window = parse_i64(key, value);
  else if (key == "stride") cfg.stride = parse_i64(key, value);
  else if (key == "in_dim") cfg.in_dim = parse_i64(key, value);
  else if (key == "hidden") cfg.hidden = parse_i64(key, value);
  else if (key == "tcn_layers") cfg.tcn_layers = static_cast<int>(parse_i64(key, value));
  else if (key == "kernel_size") cfg.kernel_size = parse_i64(key, value);
  else if (key == "dilations") cfg.dilations = value;
  else if (key == "mamba_layers") cfg.mamba_layers = static_cast<int>(parse_i64(key, value));
  else if (key == "state_dim") cfg.state_dim = parse_i64(key, value);
  else if (key == "conv_width") cfg.conv_width = parse_i64(key, value);
  else if (key == "expand") cfg.expand = parse_i64(key, value);
  else if (key == "dropout") cfg.dropout = parse_f64(key, value);
  else if (key == "epochs") cfg.epochs = static_cast<int>(parse_i64(key, value));
  else if (key == "lr") cfg.lr = parse_f64(key, value);
  else if (key == "warmup_epochs") cfg.warmup_epochs = static_cast<int>(parse_i64(key, value));
  else if (key == "weight_decay") cfg.weight_decay = parse_f64(key, value);
  else if (key == "batch") cfg.batch = static_cast<int>(parse_i64(key, value));
  else if (key == "clip_norm") cfg.clip_norm = parse_f64(key, value);
  else if (key == "workers") cfg.workers = static_cast<int>(parse_i64(key, value));
  else if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_i64(key, value));
  else if (key == "scan_variant") cfg.scan_variant = value;
  else if (key == "official_val_list") cfg.official_val_list = value;
  else if (key == "resume") cfg.resume = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value', got '" +
                        line + "'");
    }
    set_config_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, buf.str(), path);
  return cfg;
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  char buf[256];
  auto add_s = [&out](const char* k, const std::string& v) { out += std::string(k) + " = " + v + "\n"; };
  auto add_i = [&out, &buf](const char* k, int64_t v) {
    std::snprintf(buf, sizeof(buf), "%s = %lld\n", k, static_cast<long long>(v));
    out += buf;
  };
  auto add_f = [&out, &buf](const char* k, double v) {
    std::snprintf(buf, sizeof(buf), "%s = %.17g\n", k, v);
    out += buf;
  };
  add_s("data_dir", cfg.data_dir);
  add_s("out_dir", cfg.out_dir);
  add_i("fold", cfg.fold);
  add_i("k_folds", cfg.k_folds);
  add_i("window", cfg.window);
  add_i("stride", cfg.stride);
  add_i("in_dim", cfg.in_dim);
  add_i("hidden", cfg.hidden);
  add_i("tcn_layers", cfg.tcn_layers);
  add_i("kernel_size", cfg.kernel_size);
  add_s("dilations", cfg.dilations);
  add_i("mamba_layers", cfg.mamba_layers);
  add_i("state_dim", cfg.state_dim);
  add_i("conv_width", cfg.conv_width);
  add_i("expand", cfg.expand);
  add_f("dropout", cfg.dropout);
  add_i("epochs", cfg.epochs);
  add_f("lr", cfg.lr);
  add_i("warmup_epochs", cfg.warmup_epochs);
  add_f("weight_decay", cfg.weight_decay);
  add_i("batch", cfg.batch);
  add_f("clip_norm", cfg.clip_norm);
  add_i("workers", cfg.workers);
  add_i("seed", static_cast<int64_t>(cfg.seed));
  add_s("scan_variant", cfg.scan_variant);
  add_s("official_val_list", cfg.official_val_list);
  add_s("resume", cfg.resume);
  return out;
}

}  // namespace mva
