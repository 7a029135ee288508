#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "smae/ssl.hpp"
#include "smae/synthcortex.hpp"

namespace smae::ssl {

enum class Method { smae, mpp };

std::string method_name(Method m);

struct PretrainConfig {
  Method method = Method::smae;
  double ratio = 0.5;  // masking ratio; smae only, mpp fixes 40/5/5
  int epochs = 100;
  int batch = 16;
  double lr = 1e-4;
  double momentum = 0.9;
  uint64_t seed = 0;
  // When set: checkpoint.smck, metrics.csv and recon/epoch_NNN.ssrf dumps
  // land here. Empty runs fully in memory.
  std::filesystem::path out_dir;
};

struct PretrainEpoch {
  int64_t epoch = 0;  // 0 = evaluation of the untrained model
  double train_loss = NAN;
  double val_mse = NAN;  // masked patches (smae) / all patches (mpp)
  double wall_sec = 0.0;
};

struct PretrainOutput {
  SmaeP<tensor::Tensor<float>> smae;  // populated for the method that ran
  MppP<tensor::Tensor<float>> mpp;
  sit::SitConfig cfg;
  std::vector<PretrainEpoch> rows;
  double best_val = INFINITY;
  int64_t best_epoch = 0;
  int64_t skipped_steps = 0;
  std::filesystem::path checkpoint_path;  // empty when out_dir was empty
};

std::string metrics_csv(const std::vector<PretrainEpoch>& rows);

PretrainOutput pretrain(const synthcortex::SurfaceDataset& dataset,
                        const geodesy::PatchTable& table, const sit::SitConfig& cfg,
                        const PretrainConfig& pc);

}  // namespace smae::ssl
