#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "smae/geodesy.hpp"
#include "smae/sit.hpp"
#include "smae/synthcortex.hpp"

namespace smae::tasks {

using tensor::Tensor;

enum class Mode { scratch, finetune, probe };

std::string mode_name(Mode m);

struct TrainRun {
  Mode mode = Mode::scratch;
  std::optional<std::filesystem::path> init_checkpoint;  // encoder weights; optional for probe
  double data_fraction = 1.0;
  int max_epochs = 1000;
  int patience = 20;
  double lr = 1e-4;
  double momentum = 0.9;
  int batch = 16;
  int bins = 10;
  uint64_t seed = 0;

  // scratch: 1000 epochs @ 1e-4; finetune: 200 @ 1e-4; probe: 200 @ 1e-5
  static TrainRun defaults(Mode mode);
};

// Tracks best validation loss/error; "improvement" is a strict decrease by
// more than `threshold` on either metric, and the detector fires after
// `patience` consecutive epochs without one.
struct Convergence {
  int patience = 20;
  double threshold = 1e-6;
  double best_loss = INFINITY;
  double best_err = INFINITY;
  int stale = 0;
  int64_t last_improvement = 0;

  bool update(int64_t epoch, double val_loss, double val_err) {
    bool improved = false;
    if (best_loss - val_loss > threshold) {
      best_loss = val_loss;
      improved = true;
    }
    if (best_err - val_err > threshold) {
      best_err = val_err;
      improved = true;
    }
    if (improved) {
      stale = 0;
      last_improvement = epoch;
    } else {
      ++stale;
    }
    return stale >= patience;
  }
};

struct EpochStat {
  int64_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_mae = 0.0;
  double wall_sec = 0.0;
};

struct EvalMetrics {
  double mae = NAN;
  double r2 = NAN;
  int64_t count = 0;
  std::string note;  // set when r2 is undefined (zero-variance targets)
};

struct Metrics {
  EvalMetrics test;
  double best_val_loss = INFINITY;
  double best_val_mae = INFINITY;
  int64_t best_epoch = 0;
  int64_t epochs_to_converge = 0;
  bool converged = false;
  int64_t skipped_steps = 0;
  std::vector<EpochStat> per_epoch;
};

struct TrainOutput {
  sit::SitP<Tensor<float>> best_model;
  sit::SitConfig cfg;
  Metrics metrics;
};

// Per-bin round(fraction * binSize) members of `pool`, deterministic under
// seed; bins are equal-width over the whole dataset's phenotype range.
std::vector<int64_t> stratified_subset(const synthcortex::SurfaceDataset& ds,
                                       const std::vector<int64_t>& pool, double fraction,
                                       int bins, uint64_t seed);

TrainOutput train(const TrainRun& run, const sit::SitConfig& cfg,
                  const synthcortex::SurfaceDataset& dataset, const geodesy::PatchTable& table);

EvalMetrics evaluate(const sit::SitP<Tensor<float>>& model, const sit::SitConfig& cfg,
                     const synthcortex::SurfaceDataset& dataset, const geodesy::PatchTable& table,
                     synthcortex::SplitTag split);

// ---------------------------------------------------------------------------
// Cross-run comparison
// ---------------------------------------------------------------------------

struct RunSummary {
  std::string label;    // e.g. "scratch", "smae-finetune"
  std::string dataset;  // provenance tag; compared runs must share it
  uint64_t seed = 0;
  double test_mae = NAN;
  double test_r2 = NAN;
  int64_t epochs_to_converge = 0;
  bool converged = false;
};

struct Comparison {
  struct Row {
    std::string label;
    int runs = 0;
    double mean_mae = NAN, std_mae = NAN;
    double mean_r2 = NAN;
    double median_epochs = NAN, mean_epochs = NAN;
  };
  std::vector<Row> rows;                 // one per label, input order
  std::vector<std::string> improvements; // relative-to-first-label notes
};

Comparison compare_runs(const std::vector<RunSummary>& runs);
std::string comparison_table(const Comparison& cmp);
std::string comparison_csv(const Comparison& cmp);

}  // namespace smae::tasks
