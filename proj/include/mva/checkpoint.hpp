#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mva/layers.hpp"
#include "mva/tensor.hpp"

namespace mva {

// Versioned binary checkpoint: magic "MVA1", a key=value config block, then
// named tensors (name length, name, rank, extents, little-endian f32).
// save followed by load is bit-exact.
struct Checkpoint {
  std::map<std::string, std::string> config;                  // written in key order
  std::vector<std::pair<std::string, Tensor<float>>> tensors;  // written in sequence

  const Tensor<float>* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// ModelConfig <-> config block keys.
std::map<std::string, std::string> model_config_to_map(const ModelConfig& cfg);
ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv);

// Packs parameters (and optional extra tensors, e.g. optimizer state) into
// a checkpoint; unpacking shape-checks every tensor by name.
Checkpoint pack_model(const ModelParams<float>& params,
                      const std::map<std::string, std::string>& extra_config = {},
                      const std::vector<std::pair<std::string, Tensor<float>>>& extra_tensors = {});
ModelParams<float> unpack_model(const Checkpoint& ckpt);

}  // namespace mva
