#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "smae/sit.hpp"
#include "smae/tensor.hpp"

namespace smae::checkpoint {

using tensor::Tensor;

// Flat named-tensor image of a model, entries in visitation order.
struct TensorImage {
  std::vector<std::pair<std::string, Tensor<float>>> entries;
};

struct Checkpoint {
  nlohmann::json config;  // model keys + run provenance
  TensorImage tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

nlohmann::json config_to_json(const sit::SitConfig& cfg);
sit::SitConfig config_from_json(const nlohmann::json& j);

// Model config fields must agree exactly before weights are loaded.
void require_config_match(const sit::SitConfig& expected, const nlohmann::json& found);

template <typename M>
TensorImage image_of(M& model) {
  TensorImage img;
  for_each_param(model, "", [&img](const std::string& name, Tensor<float>& t) {
    img.entries.emplace_back(name, t);
  });
  return img;
}

template <typename M>
void save_model(const std::filesystem::path& path, const sit::SitConfig& cfg,
                const nlohmann::json& provenance, M& model) {
  Checkpoint ckpt;
  ckpt.config = config_to_json(cfg);
  for (const auto& [key, value] : provenance.items()) ckpt.config[key] = value;
  ckpt.tensors = image_of(model);
  write_checkpoint(path, ckpt);
}

// Every parameter of `model`, visited under `prefix`, must be present with an
// identical shape; values are copied in bit-exactly. The prefix form loads a
// submodel (e.g. just ".encoder" out of a pretraining checkpoint).
template <typename M>
void load_model(const Checkpoint& ckpt, M& model, const std::string& prefix = "") {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, t] : ckpt.tensors.entries) by_name[name] = &t;
  for_each_param(model, prefix, [&by_name](const std::string& name, Tensor<float>& t) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint is missing parameter '" + name + "'");
    if (it->second->shape() != t.shape())
      throw std::runtime_error("checkpoint parameter '" + name + "' has shape " +
                               tensor::shape_str(it->second->shape()) + ", model expects " +
                               tensor::shape_str(t.shape()));
    t = *it->second;
  });
}

}  // namespace smae::checkpoint
