#include "mva/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mva/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

namespace mva {

namespace {

constexpr char kMagic[4] = {'M', 'V', 'A', '1'};

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void write_i64(std::ofstream& f, int64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::ifstream& f, const char* what) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  if (!f) throw ParseError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

int64_t read_i64(std::ifstream& f, const char* what) {
  int64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 8);
  if (!f) throw ParseError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(kMagic, 4);
  write_u32(f, 1);  // version
  std::string cfg;
  for (const auto& [k, v] : ckpt.config) cfg += k + " = " + v + "\n";
  write_u32(f, static_cast<uint32_t>(cfg.size()));
  f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_u32(f, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    write_u32(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(f, static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) write_i64(f, t.extent(i));
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!f) throw IoError("short write to checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[4] = {};
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("bad magic in checkpoint (expected MVA1): " + path);
  }
  const uint32_t version = read_u32(f, "version");
  if (version != 1) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  const uint32_t cfg_len = read_u32(f, "config length");
  std::string cfg(cfg_len, '\0');
  f.read(cfg.data(), cfg_len);
  if (!f) throw ParseError("checkpoint truncated while reading config block: " + path);
  std::istringstream cfg_in(cfg);
  std::string line;
  while (std::getline(cfg_in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    ckpt.config[line.substr(0, eq)] = line.substr(eq + 3);
  }
  const uint32_t n_tensors = read_u32(f, "tensor count");
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const uint32_t name_len = read_u32(f, "tensor name length");
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (!f) throw ParseError("checkpoint truncated while reading tensor name: " + path);
    const uint32_t rank = read_u32(f, "tensor rank");
    if (rank > 4) throw ParseError("implausible tensor rank in checkpoint: " + std::to_string(rank));
    Shape shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = read_i64(f, "tensor extent");
    Tensor<float> t(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(t.numel() * sizeof(float))) {
      throw ParseError("checkpoint truncated in tensor '" + name + "': " + path);
    }
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  f.peek();
  if (!f.eof()) throw ParseError("trailing bytes after last tensor in checkpoint: " + path);
  return ckpt;
}

std::map<std::string, std::string> model_config_to_map(const ModelConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["tcn.in_dim"] = std::to_string(cfg.tcn.in_dim);
  kv["tcn.hidden"] = std::to_string(cfg.tcn.hidden);
  kv["tcn.n_layers"] = std::to_string(cfg.tcn.n_layers);
  kv["tcn.kernel_size"] = std::to_string(cfg.tcn.kernel_size);
  std::string dil;
  for (size_t i = 0; i < cfg.tcn.dilations.size(); ++i) {
    if (i) dil += ",";
    dil += std::to_string(cfg.tcn.dilations[i]);
  }
  kv["tcn.dilations"] = dil;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", cfg.tcn.dropout);
  kv["tcn.dropout"] = buf;
  kv["mamba.d_model"] = std::to_string(cfg.mamba.d_model);
  kv["mamba.n_layers"] = std::to_string(cfg.mamba.n_layers);
  kv["mamba.state_dim"] = std::to_string(cfg.mamba.state_dim);
  kv["mamba.conv_width"] = std::to_string(cfg.mamba.conv_width);
  kv["mamba.expand"] = std::to_string(cfg.mamba.expand);
  return kv;
}

ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig cfg;
  auto get = [&kv](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError("checkpoint config block missing key '" + key + "'");
    return it->second;
  };
  cfg.tcn.in_dim = std::stoll(get("tcn.in_dim"));
  cfg.tcn.hidden = std::stoll(get("tcn.hidden"));
  cfg.tcn.n_layers = std::stoi(get("tcn.n_layers"));
  cfg.tcn.kernel_size = std::stoll(get("tcn.kernel_size"));
  cfg.tcn.dilations.clear();
  std::istringstream dil(get("tcn.dilations"));
  std::string tok;
  while (std::getline(dil, tok, ',')) cfg.tcn.dilations.push_back(std::stoll(tok));
  cfg.tcn.dropout = std::stod(get("tcn.dropout"));
  cfg.mamba.d_model = std::stoll(get("mamba.d_model"));
  cfg.mamba.n_layers = std::stoi(get("mamba.n_layers"));
  cfg.mamba.state_dim = std::stoll(get("mamba.state_dim"));
  cfg.mamba.conv_width = std::stoll(get("mamba.conv_width"));
  cfg.mamba.expand = std::stoll(get("mamba.expand"));
  cfg.validate();
  return cfg;
}

Checkpoint pack_model(const ModelParams<float>& params,
                      const std::map<std::string, std::string>& extra_config,
                      const std::vector<std::pair<std::string, Tensor<float>>>& extra_tensors) {
  Checkpoint ckpt;
  ckpt.config = model_config_to_map(params.config);
  for (const auto& [k, v] : extra_config) ckpt.config[k] = v;
  params.for_each([&ckpt](const std::string& name, const Tensor<float>& t) {
    ckpt.tensors.emplace_back(name, t);
  });
  for (const auto& [name, t] : extra_tensors) ckpt.tensors.emplace_back(name, t);
  return ckpt;
}

ModelParams<float> unpack_model(const Checkpoint& ckpt) {
  ModelParams<float> params = ModelParams<float>::create(model_config_from_map(ckpt.config));
  params.for_each([&ckpt](const std::string& name, Tensor<float>& t) {
    const Tensor<float>* stored = ckpt.find(name);
    if (!stored) throw ParseError("checkpoint is missing tensor '" + name + "'");
    if (stored->shape != t.shape) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_str(stored->shape) +
                       " but the config requires " + shape_str(t.shape));
    }
    t.data = stored->data;
  });
  return params;
}

}  // namespace mva
