#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "smae/tensor.hpp"

namespace smae::synthcortex {

using tensor::Tensor;

enum class SplitTag : uint8_t { train = 0, val = 1, test = 2 };

struct SurfaceSubject {
  std::string id;
  double phenotype = 0.0;  // synthetic "age" in [0,1]
  SplitTag split = SplitTag::train;
  Tensor<float> x;  // |V| x C channel maps
};

struct SurfaceDataset {
  int data_level = 0;
  int patch_level = 0;  // data_level - 3; negative means "too coarse to patch"
  int channels = 0;
  std::string provenance;  // generator config as JSON text
  std::vector<SurfaceSubject> subjects;

  int64_t vertex_count() const {
    int64_t v = 2;
    int64_t f = 10;
    for (int k = 0; k < data_level; ++k) f *= 4;
    return v + f;
  }
  std::vector<int64_t> indices_of(SplitTag tag) const {
    std::vector<int64_t> out;
    for (size_t i = 0; i < subjects.size(); ++i)
      if (subjects[i].split == tag) out.push_back(static_cast<int64_t>(i));
    return out;
  }
};

// Phenotype-conditioned smooth fields: per channel three fixed directional
// cosine patterns A, B, C (shared across subjects, fixed by the seed) blended
// as X = (1-y)A + yB + 0.5*sin(pi*y)*C, plus white noise scaled to the given
// snr (snr = +infinity means noiseless).
SurfaceDataset generate(int64_t n, int data_level, int channels, uint64_t seed, double snr);

// Per-subject per-channel z-score, then clip to [-3, 3]; a channel with std
// below 1e-8 becomes all zeros.
void normalize(SurfaceSubject& subject);
void normalize(SurfaceDataset& dataset);

// Stratified split over equal-width phenotype bins. Global split sizes hit
// the largest-remainder targets exactly; per-bin allocations stay within one
// subject of proportional.
void split_dataset(SurfaceDataset& dataset, double train, double val, double test, int bins,
                   uint64_t seed);

// Equal-width bin index per subject over the dataset's phenotype range.
std::vector<int> phenotype_bins(const SurfaceDataset& dataset, int bins);

void write_dataset(const SurfaceDataset& dataset, const std::filesystem::path& path);
SurfaceDataset read_dataset(const std::filesystem::path& path);

}  // namespace smae::synthcortex
