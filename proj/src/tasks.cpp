#include "smae/tasks.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <numeric>
#include <sstream>

#include "smae/checkpoint.hpp"
#include "smae/rng.hpp"

namespace smae::tasks {

using synthcortex::SplitTag;
using synthcortex::SurfaceDataset;
using tensor::Shape;
using tensor::Var;

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::scratch: return "scratch";
    case Mode::finetune: return "finetune";
    case Mode::probe: return "probe";
  }
  return "?";
}

TrainRun TrainRun::defaults(Mode mode) {
  TrainRun run;
  run.mode = mode;
  switch (mode) {
    case Mode::scratch:
      run.max_epochs = 1000;
      run.lr = 1e-4;
      break;
    case Mode::finetune:
      run.max_epochs = 200;
      run.lr = 1e-4;
      break;
    case Mode::probe:
      run.max_epochs = 200;
      run.lr = 1e-5;
      break;
  }
  return run;
}

std::vector<int64_t> stratified_subset(const SurfaceDataset& ds, const std::vector<int64_t>& pool,
                                       double fraction, int bins, uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("data fraction must be in (0,1], got " + std::to_string(fraction));
  if (fraction == 1.0) return pool;

  const std::vector<int> bin_of = phenotype_bins(ds, bins);
  std::vector<std::vector<int64_t>> members(static_cast<size_t>(bins));
  for (int64_t i : pool) members[static_cast<size_t>(bin_of[static_cast<size_t>(i)])].push_back(i);

  Rng rng(seed);
  std::vector<int64_t> out;
  for (int b = 0; b < bins; ++b) {
    auto& m = members[static_cast<size_t>(b)];
    if (m.empty()) continue;
    const int64_t take = round_count(fraction * static_cast<double>(m.size()));
    Rng bin_rng = rng.fork(static_cast<uint64_t>(b));
    bin_rng.shuffle(m);
    for (int64_t k = 0; k < take; ++k) out.push_back(m[static_cast<size_t>(k)]);
  }
  if (out.empty())
    throw std::invalid_argument("data fraction " + std::to_string(fraction) +
                                " selects zero subjects");
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

// Normalized patch tokens and targets for one split's subjects.
struct TokenCache {
  std::vector<Tensor<float>> tokens;  // each [N, 45*C]
  std::vector<double> targets;
};

TokenCache build_cache(const SurfaceDataset& ds, const std::vector<int64_t>& pool,
                       const geodesy::PatchTable& table) {
  TokenCache cache;
  for (int64_t i : pool) {
    synthcortex::SurfaceSubject subj = ds.subjects[static_cast<size_t>(i)];
    synthcortex::normalize(subj);
    cache.tokens.push_back(sit::patchify(subj.x, table));
    cache.targets.push_back(subj.phenotype);
  }
  return cache;
}

// Stack cache rows `idx` into one [B, N, P] batch tensor.
Tensor<float> stack_batch(const TokenCache& cache, const std::vector<int64_t>& idx) {
  const Shape& s = cache.tokens[0].shape();
  Tensor<float> out(Shape{static_cast<int64_t>(idx.size()), s[0], s[1]});
  const int64_t stride = s[0] * s[1];
  for (size_t k = 0; k < idx.size(); ++k)
    std::copy(cache.tokens[static_cast<size_t>(idx[k])].data(),
              cache.tokens[static_cast<size_t>(idx[k])].data() + stride,
              out.data() + static_cast<int64_t>(k) * stride);
  return out;
}

std::vector<double> predict_cache(const sit::SitP<Tensor<float>>& model,
                                  const sit::SitConfig& cfg, const TokenCache& cache,
                                  const Tensor<float>& posenc, int batch) {
  std::vector<double> preds;
  const int64_t n = static_cast<int64_t>(cache.tokens.size());
  for (int64_t at = 0; at < n; at += batch) {
    std::vector<int64_t> idx;
    for (int64_t k = at; k < std::min(n, at + batch); ++k) idx.push_back(k);
    tensor::Tape<float> tape;
    auto mounted = sit::mount(tape, model, false);
    Var<float> pred = sit::sit_forward(mounted, tape.constant(stack_batch(cache, idx)),
                                       tape.constant(posenc), cfg.heads);
    for (size_t k = 0; k < idx.size(); ++k)
      preds.push_back(static_cast<double>(pred.value()[static_cast<int64_t>(k)]));
  }
  return preds;
}

EvalMetrics metrics_of(const std::vector<double>& preds, const std::vector<double>& targets) {
  EvalMetrics m;
  m.count = static_cast<int64_t>(preds.size());
  double abs_sum = 0.0, mean_y = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    abs_sum += std::abs(preds[i] - targets[i]);
    mean_y += targets[i];
  }
  mean_y /= static_cast<double>(targets.size());
  m.mae = abs_sum / static_cast<double>(preds.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    ss_res += (preds[i] - targets[i]) * (preds[i] - targets[i]);
    ss_tot += (targets[i] - mean_y) * (targets[i] - mean_y);
  }
  if (ss_tot < 1e-30) {
    m.r2 = NAN;
    m.note = "R^2 undefined: zero-variance targets";
  } else {
    m.r2 = 1.0 - ss_res / ss_tot;
  }
  return m;
}

std::vector<uint8_t> encoder_bytes(sit::SitP<Tensor<float>>& model) {
  std::vector<uint8_t> bytes;
  for_each_param(model.encoder, "", [&bytes](const std::string&, Tensor<float>& t) {
    const auto* p = reinterpret_cast<const uint8_t*>(t.data());
    bytes.insert(bytes.end(), p, p + t.numel() * sizeof(float));
  });
  return bytes;
}

}  // namespace

TrainOutput train(const TrainRun& run, const sit::SitConfig& cfg, const SurfaceDataset& dataset,
                  const geodesy::PatchTable& table) {
  cfg.validate();
  if (dataset.data_level != cfg.data_level || dataset.channels != cfg.channels)
    throw std::invalid_argument("dataset (level " + std::to_string(dataset.data_level) + ", " +
                                std::to_string(dataset.channels) +
                                "ch) does not match model config");
  if (run.batch < 1 || run.max_epochs < 1 || run.patience < 1)
    throw std::invalid_argument("batch, epochs and patience must be positive");

  Rng rng(run.seed);
  std::vector<int64_t> train_pool = dataset.indices_of(SplitTag::train);
  train_pool = stratified_subset(dataset, train_pool, run.data_fraction, run.bins, rng.fork(7).seed());
  const std::vector<int64_t> val_pool = dataset.indices_of(SplitTag::val);
  const std::vector<int64_t> test_pool = dataset.indices_of(SplitTag::test);
  if (train_pool.empty() || val_pool.empty())
    throw std::invalid_argument("training requires non-empty train and val splits");

  const TokenCache train_cache = build_cache(dataset, train_pool, table);
  const TokenCache val_cache = build_cache(dataset, val_pool, table);

  Rng init_rng = rng.fork(1);
  sit::SitP<Tensor<float>> model = sit::init_sit<float>(cfg, init_rng);
  if (run.init_checkpoint) {
    const auto ckpt = checkpoint::read_checkpoint(*run.init_checkpoint);
    checkpoint::require_config_match(cfg, ckpt.config);
    checkpoint::load_model(ckpt, model.encoder, ".encoder");
  } else if (run.mode == Mode::finetune) {
    throw std::invalid_argument("finetune mode requires an initial checkpoint");
  }

  const bool probe = run.mode == Mode::probe;
  const std::vector<uint8_t> frozen_before = probe ? encoder_bytes(model) : std::vector<uint8_t>{};

  std::vector<Tensor<float>*> params =
      probe ? sit::param_ptrs<float>(model.head) : sit::param_ptrs<float>(model);
  tensor::SgdState<float> opt({run.lr, run.momentum});

  const Tensor<float> posenc =
      sit::sincos_posenc<float>(table.patch_count() + 1, cfg.hidden_dim);

  TrainOutput out;
  out.cfg = cfg;
  out.best_model = model;
  Metrics& metrics = out.metrics;
  Convergence conv{run.patience};

  for (int64_t epoch = 1; epoch <= run.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int64_t> order(train_cache.tokens.size());
    std::iota(order.begin(), order.end(), 0);
    rng.fork(100 + static_cast<uint64_t>(epoch)).shuffle(order);

    double loss_sum = 0.0;
    int64_t seen = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(run.batch)) {
      std::vector<int64_t> idx(order.begin() + static_cast<int64_t>(at),
                               order.begin() +
                                   static_cast<int64_t>(std::min(order.size(),
                                                                 at + static_cast<size_t>(run.batch))));
      Tensor<float> yb(Shape{static_cast<int64_t>(idx.size()), 1});
      for (size_t k = 0; k < idx.size(); ++k)
        yb[static_cast<int64_t>(k)] =
            static_cast<float>(train_cache.targets[static_cast<size_t>(idx[k])]);

      tensor::Tape<float> tape;
      sit::SitP<Var<float>> mounted;
      mounted.encoder = sit::mount(tape, model.encoder, !probe);
      mounted.head = sit::mount(tape, model.head, true);
      Var<float> pred = sit::sit_forward(mounted, tape.constant(stack_batch(train_cache, idx)),
                                         tape.constant(posenc), cfg.heads);
      Var<float> loss = mse(pred, tape.constant(std::move(yb)));
      const double loss_val = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(loss_val))
        throw std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch) +
                                 " (mode " + mode_name(run.mode) + ", seed " +
                                 std::to_string(run.seed) + ")");
      tape.backward(loss);
      std::vector<Tensor<float>> grads =
          probe ? sit::collect_grads(tape, mounted.head) : sit::collect_grads(tape, mounted);
      opt.step(params, grads);
      loss_sum += loss_val * static_cast<double>(idx.size());
      seen += static_cast<int64_t>(idx.size());
    }

    const std::vector<double> val_preds = predict_cache(model, cfg, val_cache, posenc, run.batch);
    double val_se = 0.0, val_ae = 0.0;
    for (size_t i = 0; i < val_preds.size(); ++i) {
      const double d = val_preds[i] - val_cache.targets[i];
      val_se += d * d;
      val_ae += std::abs(d);
    }
    const double val_loss = val_se / static_cast<double>(val_preds.size());
    const double val_mae = val_ae / static_cast<double>(val_preds.size());

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics.per_epoch.push_back(
        {epoch, loss_sum / static_cast<double>(seen), val_loss, val_mae, wall});

    if (val_loss < metrics.best_val_loss) {
      metrics.best_val_loss = val_loss;
      metrics.best_val_mae = val_mae;
      metrics.best_epoch = epoch;
      out.best_model = model;
    }

    if (conv.update(epoch, val_loss, val_mae)) {
      metrics.converged = true;
      metrics.epochs_to_converge = conv.last_improvement;
      break;
    }
  }
  if (!metrics.converged) metrics.epochs_to_converge = run.max_epochs;
  metrics.skipped_steps = opt.skipped_steps();

  if (probe) {
    std::vector<uint8_t> frozen_after = encoder_bytes(model);
    if (frozen_after != frozen_before)
      throw std::runtime_error("probe run altered encoder parameters; freeze contract violated");
  }

  if (!test_pool.empty())
    metrics.test = evaluate(out.best_model, cfg, dataset, table, SplitTag::test);
  return out;
}

EvalMetrics evaluate(const sit::SitP<Tensor<float>>& model, const sit::SitConfig& cfg,
                     const SurfaceDataset& dataset, const geodesy::PatchTable& table,
                     SplitTag split) {
  const std::vector<int64_t> pool = dataset.indices_of(split);
  if (pool.empty()) throw std::invalid_argument("evaluation split is empty");
  const TokenCache cache = build_cache(dataset, pool, table);
  const Tensor<float> posenc =
      sit::sincos_posenc<float>(table.patch_count() + 1, cfg.hidden_dim);
  const std::vector<double> preds = predict_cache(model, cfg, cache, posenc, 16);
  return metrics_of(preds, cache.targets);
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Comparison compare_runs(const std::vector<RunSummary>& runs) {
  if (runs.size() < 2) throw std::invalid_argument("comparison needs at least 2 runs");
  for (const auto& r : runs)
    if (r.dataset != runs[0].dataset)
      throw std::invalid_argument("compared runs use different datasets: '" + runs[0].dataset +
                                  "' vs '" + r.dataset + "'");

  std::vector<std::string> labels;
  for (const auto& r : runs)
    if (std::find(labels.begin(), labels.end(), r.label) == labels.end()) labels.push_back(r.label);

  Comparison cmp;
  for (const auto& label : labels) {
    std::vector<double> maes, r2s, epochs;
    for (const auto& r : runs)
      if (r.label == label) {
        maes.push_back(r.test_mae);
        r2s.push_back(r.test_r2);
        epochs.push_back(static_cast<double>(r.epochs_to_converge));
      }
    Comparison::Row row;
    row.label = label;
    row.runs = static_cast<int>(maes.size());
    const double n = static_cast<double>(maes.size());
    row.mean_mae = std::accumulate(maes.begin(), maes.end(), 0.0) / n;
    double var = 0.0;
    for (double m : maes) var += (m - row.mean_mae) * (m - row.mean_mae);
    row.std_mae = maes.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    row.mean_r2 = std::accumulate(r2s.begin(), r2s.end(), 0.0) / n;
    row.mean_epochs = std::accumulate(epochs.begin(), epochs.end(), 0.0) / n;
    row.median_epochs = median(epochs);
    cmp.rows.push_back(row);
  }

  const Comparison::Row& base = cmp.rows.front();
  for (size_t i = 1; i < cmp.rows.size(); ++i) {
    const Comparison::Row& r = cmp.rows[i];
    std::ostringstream os;
    os.precision(4);
    os << r.label << " vs " << base.label << ": ";
    if (base.mean_mae > 0)
      os << "MAE change " << (r.mean_mae - base.mean_mae) / base.mean_mae * 100.0 << "%, ";
    if (base.median_epochs > 0)
      os << "convergence speedup "
         << (base.median_epochs - r.median_epochs) / base.median_epochs * 100.0 << "%";
    cmp.improvements.push_back(os.str());
  }
  return cmp;
}

std::string comparison_table(const Comparison& cmp) {
  std::ostringstream os;
  os.precision(4);
  os << std::left;
  os.setf(std::ios::fixed);
  os << "run                     n   MAE(mean+/-std)     R2(mean)  epochs(median/mean)\n";
  for (const auto& r : cmp.rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%-22s %3d   %.4f +/- %.4f   %8.4f  %8.1f / %.1f\n",
                  r.label.c_str(), r.runs, r.mean_mae, r.std_mae, r.mean_r2, r.median_epochs,
                  r.mean_epochs);
    os << line;
  }
  for (const auto& note : cmp.improvements) os << note << "\n";
  return os.str();
}

std::string comparison_csv(const Comparison& cmp) {
  std::ostringstream os;
  os << "label,runs,mean_mae,std_mae,mean_r2,median_epochs,mean_epochs\n";
  os.precision(10);
  for (const auto& r : cmp.rows)
    os << r.label << ',' << r.runs << ',' << r.mean_mae << ',' << r.std_mae << ',' << r.mean_r2
       << ',' << r.median_epochs << ',' << r.mean_epochs << "\n";
  return os.str();
}

}  // namespace smae::tasks
