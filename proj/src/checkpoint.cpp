#include "smae/checkpoint.hpp"

#include "smae/io.hpp"

namespace smae::checkpoint {

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::Writer w(path);
  w.magic("SMCK");
  w.u32(1);
  w.str(ckpt.config.dump());
  w.u32(static_cast<uint32_t>(ckpt.tensors.entries.size()));
  for (const auto& [name, t] : ckpt.tensors.entries) {
    w.str(name);
    w.u32(static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) w.u64(static_cast<uint64_t>(d));
    w.f32_array(t.span());
  }
  w.close();
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic("SMCK");
  const uint32_t version = r.u32();
  if (version != 1)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                             " in " + path.string());
  Checkpoint ckpt;
  try {
    ckpt.config = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed checkpoint config in " + path.string() + ": " + e.what());
  }
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const uint32_t rank = r.u32();
    if (rank > 8)
      throw std::runtime_error("implausible tensor rank " + std::to_string(rank) + " in " +
                               path.string());
    tensor::Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int64_t>(r.u64());
    Tensor<float> t(shape);
    r.f32_array(t.span());
    ckpt.tensors.entries.emplace_back(std::move(name), std::move(t));
  }
  if (!r.at_eof()) throw std::runtime_error("trailing bytes in checkpoint " + path.string());
  return ckpt;
}

nlohmann::json config_to_json(const sit::SitConfig& cfg) {
  return {{"patchLevel", cfg.patch_level}, {"dataLevel", cfg.data_level},
          {"channels", cfg.channels},     {"hiddenDim", cfg.hidden_dim},
          {"layers", cfg.layers},         {"heads", cfg.heads},
          {"ffnMult", cfg.ffn_mult}};
}

sit::SitConfig config_from_json(const nlohmann::json& j) {
  sit::SitConfig cfg;
  cfg.patch_level = j.at("patchLevel").get<int>();
  cfg.data_level = j.at("dataLevel").get<int>();
  cfg.channels = j.at("channels").get<int>();
  cfg.hidden_dim = j.at("hiddenDim").get<int>();
  cfg.layers = j.at("layers").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.ffn_mult = j.at("ffnMult").get<int>();
  cfg.validate();
  return cfg;
}

void require_config_match(const sit::SitConfig& expected, const nlohmann::json& found) {
  const sit::SitConfig got = config_from_json(found);
  auto mismatch = [](const char* key, int a, int b) {
    return std::string(key) + " differs: run has " + std::to_string(a) + ", checkpoint has " +
           std::to_string(b);
  };
  std::vector<std::string> errs;
  if (expected.patch_level != got.patch_level)
    errs.push_back(mismatch("patchLevel", expected.patch_level, got.patch_level));
  if (expected.data_level != got.data_level)
    errs.push_back(mismatch("dataLevel", expected.data_level, got.data_level));
  if (expected.channels != got.channels)
    errs.push_back(mismatch("channels", expected.channels, got.channels));
  if (expected.hidden_dim != got.hidden_dim)
    errs.push_back(mismatch("hiddenDim", expected.hidden_dim, got.hidden_dim));
  if (expected.layers != got.layers) errs.push_back(mismatch("layers", expected.layers, got.layers));
  if (expected.heads != got.heads) errs.push_back(mismatch("heads", expected.heads, got.heads));
  if (expected.ffn_mult != got.ffn_mult)
    errs.push_back(mismatch("ffnMult", expected.ffn_mult, got.ffn_mult));
  if (!errs.empty()) {
    std::string msg = "checkpoint/model config mismatch:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw std::invalid_argument(msg);
  }
}

}  // namespace smae::checkpoint
