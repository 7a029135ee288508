#include "smae/cli.hpp"

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "smae/checkpoint.hpp"
#include "smae/geodesy.hpp"
#include "smae/ssl_train.hpp"
#include "smae/synthcortex.hpp"
#include "smae/tasks.hpp"

namespace smae::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

uint64_t env_seed() {
  const char* env = std::getenv("SMAE_SEED");
  if (!env) return 0;
  try {
    size_t used = 0;
    const uint64_t v = std::stoull(env, &used);
    if (used != std::strlen(env)) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("SMAE_SEED must be an unsigned integer, got '") +
                                env + "'");
  }
}

// Run-config JSON: model keys as stored in checkpoints plus training keys.
// Unknown keys and wrong types are all reported together.
json load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config file " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config file must hold a JSON object");

  static const std::map<std::string, std::string> kKnown = {
      {"patchLevel", "int"}, {"dataLevel", "int"},  {"channels", "int"},
      {"hiddenDim", "int"},  {"layers", "int"},     {"heads", "int"},
      {"ffnMult", "int"},    {"epochs", "int"},     {"maxEpochs", "int"},
      {"patience", "int"},   {"batch", "int"},      {"bins", "int"},
      {"lr", "number"},      {"momentum", "number"}, {"ratio", "number"},
      {"fraction", "number"}, {"seed", "uint"},      {"method", "string"},
      {"mode", "string"},    {"label", "string"}};
  std::vector<std::string> bad;
  for (const auto& [key, value] : j.items()) {
    auto it = kKnown.find(key);
    if (it == kKnown.end()) {
      bad.push_back("unknown key '" + key + "'");
      continue;
    }
    const std::string& want = it->second;
    const bool ok = (want == "int" && value.is_number_integer()) ||
                    (want == "uint" && value.is_number_unsigned()) ||
                    (want == "number" && value.is_number()) ||
                    (want == "string" && value.is_string());
    if (!ok) bad.push_back("key '" + key + "' must be a " + want);
  }
  if (!bad.empty()) {
    std::string msg = "invalid config file " + path.string() + ":";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw std::invalid_argument(msg);
  }
  return j;
}

template <typename T>
void take(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

json model_config_json(const sit::SitConfig& cfg) {
  return checkpoint::config_to_json(cfg);
}

// Shared flag bundle for commands that build a model.
struct ModelFlags {
  std::string config_path;
  int dim = -1, layers = -1, heads = -1, ffn = -1;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config_path, "run config JSON file")->check(CLI::ExistingFile);
    sub->add_option("--dim", dim, "hidden width D");
    sub->add_option("--layers", layers, "encoder depth L");
    sub->add_option("--heads", heads, "attention heads H");
    sub->add_option("--ffn-mult", ffn, "FFN width multiplier");
  }

  // dataset geometry -> config file -> explicit flags, later wins
  sit::SitConfig resolve(const synthcortex::SurfaceDataset& ds, const json& run_cfg) const {
    sit::SitConfig cfg;
    cfg.data_level = ds.data_level;
    cfg.patch_level = ds.data_level - sit::kPatchDepth;
    cfg.channels = ds.channels;
    take(run_cfg, "patchLevel", cfg.patch_level);
    take(run_cfg, "dataLevel", cfg.data_level);
    take(run_cfg, "channels", cfg.channels);
    take(run_cfg, "hiddenDim", cfg.hidden_dim);
    take(run_cfg, "layers", cfg.layers);
    take(run_cfg, "heads", cfg.heads);
    take(run_cfg, "ffnMult", cfg.ffn_mult);
    if (dim > 0) cfg.hidden_dim = dim;
    if (layers >= 0) cfg.layers = layers;
    if (heads > 0) cfg.heads = heads;
    if (ffn > 0) cfg.ffn_mult = ffn;
    return cfg;
  }
};

geodesy::PatchTable table_for(const sit::SitConfig& cfg) {
  return geodesy::patch_table(geodesy::build_hierarchy(cfg.patch_level, sit::kPatchDepth));
}

std::string tasks_metrics_csv(const json& cfg, const std::vector<tasks::EpochStat>& rows) {
  std::ostringstream os;
  os << "# config " << cfg.dump() << "\n";
  os << "epoch,trainLoss,valLoss,valMAE,wallClockSec\n";
  os.precision(10);
  for (const auto& r : rows)
    os << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.val_mae << ','
       << r.wall_sec << "\n";
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
  if (!f) throw std::runtime_error("failed to write " + path.string());
}

// ---------------------------------------------------------------------------
// finetune/scratch/probe runs shared by cmd_finetune and cmd_sweep
// ---------------------------------------------------------------------------

struct SupervisedArgs {
  tasks::TrainRun run;
  sit::SitConfig cfg;
  std::string label;
  fs::path out_dir;
};

json run_supervised(const SupervisedArgs& a, const synthcortex::SurfaceDataset& ds,
                    const geodesy::PatchTable& table, std::ostream& out) {
  tasks::TrainOutput res = tasks::train(a.run, a.cfg, ds, table);

  json cfg_echo = model_config_json(a.cfg);
  cfg_echo["mode"] = tasks::mode_name(a.run.mode);
  cfg_echo["maxEpochs"] = a.run.max_epochs;
  cfg_echo["patience"] = a.run.patience;
  cfg_echo["lr"] = a.run.lr;
  cfg_echo["momentum"] = a.run.momentum;
  cfg_echo["batch"] = a.run.batch;
  cfg_echo["fraction"] = a.run.data_fraction;
  cfg_echo["seed"] = a.run.seed;
  if (a.run.init_checkpoint) cfg_echo["initCheckpoint"] = a.run.init_checkpoint->string();

  json summary;
  summary["label"] = a.label;
  summary["dataset"] = ds.provenance;
  summary["seed"] = a.run.seed;
  summary["finalMAE"] = res.metrics.test.mae;
  summary["r2"] = res.metrics.test.r2;
  if (!res.metrics.test.note.empty()) summary["note"] = res.metrics.test.note;
  summary["epochsToConverge"] = res.metrics.epochs_to_converge;
  summary["converged"] = res.metrics.converged;
  summary["bestEpoch"] = res.metrics.best_epoch;
  summary["bestValLoss"] = res.metrics.best_val_loss;
  summary["bestValMAE"] = res.metrics.best_val_mae;
  summary["config"] = cfg_echo;

  fs::create_directories(a.out_dir);
  json prov{{"mode", tasks::mode_name(a.run.mode)}, {"label", a.label}, {"seed", a.run.seed}};
  checkpoint::save_model(a.out_dir / "model.smck", a.cfg, prov, res.best_model);
  write_text(a.out_dir / "metrics.csv", tasks_metrics_csv(cfg_echo, res.metrics.per_epoch));
  write_text(a.out_dir / "summary.json", summary.dump(2) + "\n");

  out << a.label << ": test MAE " << res.metrics.test.mae << ", R2 " << res.metrics.test.r2
      << ", epochs to converge " << res.metrics.epochs_to_converge
      << (res.metrics.converged ? "" : " (budget exhausted)") << "\n";
  return summary;
}

// ---------------------------------------------------------------------------
// subcommand bodies
// ---------------------------------------------------------------------------

void cmd_geom_check(int level, int patch_level, std::ostream& out) {
  if (patch_level == INT32_MIN) patch_level = level - sit::kPatchDepth;
  geodesy::IcoHierarchy h = geodesy::build_hierarchy(patch_level, level - patch_level);
  geodesy::validate_hierarchy(h);
  geodesy::PatchTable t = geodesy::patch_table(h);
  geodesy::validate_patch_table(h, t);
  out << t.data_vertex_count() << " vertices, " << h.data_mesh().face_count() << " faces, "
      << t.patch_count() << " patches × " << t.verts_per_patch << "\n";
}

struct GenArgs {
  int64_t n = 200;
  int level = 4;
  int channels = 4;
  double snr = 4.0;
  double train = 0.7, val = 0.15, test = 0.15;
  int bins = 10;
  uint64_t seed = 0;
  bool seed_set = false;
  std::string out_path;
};

void cmd_gen_data(const GenArgs& g, std::ostream& out) {
  const uint64_t seed = g.seed_set ? g.seed : env_seed();
  synthcortex::SurfaceDataset ds = synthcortex::generate(g.n, g.level, g.channels, seed, g.snr);
  synthcortex::split_dataset(ds, g.train, g.val, g.test, g.bins, seed);
  synthcortex::write_dataset(ds, g.out_path);
  out << "wrote " << g.out_path << ": " << ds.subjects.size() << " subjects, level "
      << ds.data_level << " (" << ds.vertex_count() << " vertices), " << ds.channels
      << " channels, train/val/test = " << ds.indices_of(synthcortex::SplitTag::train).size()
      << "/" << ds.indices_of(synthcortex::SplitTag::val).size() << "/"
      << ds.indices_of(synthcortex::SplitTag::test).size() << ", seed " << seed << "\n";
}

struct PretrainArgs {
  std::string method = "smae";
  double ratio = 0.5;
  bool ratio_set = false;
  std::string data_path, out_dir;
  ModelFlags model;
  int epochs = -1, batch = -1;
  double lr = -1, momentum = -1;
  uint64_t seed = 0;
  bool seed_set = false;
};

ssl::PretrainOutput run_pretrain(const PretrainArgs& p, std::ostream& out, std::ostream& err) {
  if (p.method != "smae" && p.method != "mpp")
    throw std::invalid_argument("--method must be smae or mpp, got '" + p.method + "'");
  if (p.method == "mpp" && p.ratio_set)
    err << "warning: --ratio is ignored for mpp (corruption is fixed at 40/5/5)\n";

  const json run_cfg = p.model.config_path.empty() ? json::object()
                                                   : load_run_config(p.model.config_path);
  synthcortex::SurfaceDataset ds = synthcortex::read_dataset(p.data_path);
  const sit::SitConfig cfg = p.model.resolve(ds, run_cfg);
  cfg.validate();

  ssl::PretrainConfig pc;
  pc.method = p.method == "smae" ? ssl::Method::smae : ssl::Method::mpp;
  take(run_cfg, "ratio", pc.ratio);
  take(run_cfg, "epochs", pc.epochs);
  take(run_cfg, "batch", pc.batch);
  take(run_cfg, "lr", pc.lr);
  take(run_cfg, "momentum", pc.momentum);
  take(run_cfg, "seed", pc.seed);
  if (p.ratio_set) pc.ratio = p.ratio;
  if (p.epochs > 0) pc.epochs = p.epochs;
  if (p.batch > 0) pc.batch = p.batch;
  if (p.lr > 0) pc.lr = p.lr;
  if (p.momentum >= 0) pc.momentum = p.momentum;
  if (p.seed_set)
    pc.seed = p.seed;
  else if (!run_cfg.contains("seed"))
    pc.seed = env_seed();
  pc.out_dir = p.out_dir;

  const geodesy::PatchTable table = table_for(cfg);
  ssl::PretrainOutput res = ssl::pretrain(ds, table, cfg, pc);
  out << ssl::method_name(pc.method) << " pretrain: " << pc.epochs << " epochs, best val MSE "
      << res.best_val << " at epoch " << res.best_epoch << "\n";
  if (!res.checkpoint_path.empty()) out << "wrote " << res.checkpoint_path.string() << "\n";
  return res;
}

struct FinetuneArgs {
  std::string init = "none";
  std::string mode = "full";
  double fraction = 1.0;
  std::string data_path, out_dir, label;
  ModelFlags model;
  int max_epochs = -1, patience = -1, batch = -1;
  double lr = -1, momentum = -1;
  uint64_t seed = 0;
  bool seed_set = false;
};

void cmd_finetune(const FinetuneArgs& f, std::ostream& out) {
  tasks::Mode mode;
  if (f.mode == "probe")
    mode = tasks::Mode::probe;
  else if (f.mode == "full")
    mode = f.init == "none" ? tasks::Mode::scratch : tasks::Mode::finetune;
  else
    throw std::invalid_argument("--mode must be full or probe, got '" + f.mode + "'");
  if (f.init != "none" && !fs::exists(f.init))
    throw std::invalid_argument("checkpoint not found: " + f.init);

  const json run_cfg = f.model.config_path.empty() ? json::object()
                                                   : load_run_config(f.model.config_path);
  synthcortex::SurfaceDataset ds = synthcortex::read_dataset(f.data_path);

  // With a checkpoint, its embedded config is the model default; flags and
  // config file still override (train() re-checks the match).
  sit::SitConfig cfg;
  if (f.init != "none") {
    const checkpoint::Checkpoint ckpt = checkpoint::read_checkpoint(f.init);
    cfg = checkpoint::config_from_json(ckpt.config);
    take(run_cfg, "hiddenDim", cfg.hidden_dim);
    take(run_cfg, "layers", cfg.layers);
    take(run_cfg, "heads", cfg.heads);
    take(run_cfg, "ffnMult", cfg.ffn_mult);
    if (f.model.dim > 0) cfg.hidden_dim = f.model.dim;
    if (f.model.layers >= 0) cfg.layers = f.model.layers;
    if (f.model.heads > 0) cfg.heads = f.model.heads;
    if (f.model.ffn > 0) cfg.ffn_mult = f.model.ffn;
  } else {
    cfg = f.model.resolve(ds, run_cfg);
  }
  cfg.validate();

  SupervisedArgs a;
  a.run = tasks::TrainRun::defaults(mode);
  if (f.init != "none") a.run.init_checkpoint = fs::path(f.init);
  a.run.data_fraction = f.fraction;
  take(run_cfg, "maxEpochs", a.run.max_epochs);
  take(run_cfg, "patience", a.run.patience);
  take(run_cfg, "batch", a.run.batch);
  take(run_cfg, "lr", a.run.lr);
  take(run_cfg, "momentum", a.run.momentum);
  take(run_cfg, "fraction", a.run.data_fraction);
  take(run_cfg, "seed", a.run.seed);
  if (f.max_epochs > 0) a.run.max_epochs = f.max_epochs;
  if (f.patience > 0) a.run.patience = f.patience;
  if (f.batch > 0) a.run.batch = f.batch;
  if (f.lr > 0) a.run.lr = f.lr;
  if (f.momentum >= 0) a.run.momentum = f.momentum;
  if (f.seed_set)
    a.run.seed = f.seed;
  else if (!run_cfg.contains("seed"))
    a.run.seed = env_seed();

  a.cfg = cfg;
  a.label = f.label;
  if (a.label.empty()) take(run_cfg, "label", a.label);
  if (a.label.empty()) a.label = tasks::mode_name(mode);
  a.out_dir = f.out_dir;
  run_supervised(a, ds, table_for(cfg), out);
}

struct SweepArgs {
  std::vector<double> ratios{0.25, 0.5, 0.75, 0.9};
  std::string data_path, out_dir;
  ModelFlags model;
  int pre_epochs = -1, ft_max_epochs = -1, batch = -1;
  double lr = -1;
  double fraction = 1.0;
  uint64_t seed = 0;
  bool seed_set = false;
};

bool valid_summary(const fs::path& path) {
  if (!fs::exists(path)) return false;
  std::ifstream in(path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error&) {
    return false;
  }
  return j.is_object() && j.contains("finalMAE") && j.contains("epochsToConverge");
}

void cmd_sweep(const SweepArgs& s, std::ostream& out, std::ostream& err) {
  if (s.ratios.empty()) throw std::invalid_argument("--ratios must name at least one ratio");
  for (double r : s.ratios)
    if (!(r > 0.0 && r < 1.0))
      throw std::invalid_argument("masking ratio must lie in (0,1), got " + std::to_string(r));

  struct Row {
    double ratio;
    double masked_mse, mae, r2;
    int64_t epochs;
  };
  std::vector<Row> rows;
  json sweep_cfg{{"ratios", s.ratios}, {"data", s.data_path}, {"fraction", s.fraction}};

  for (double ratio : s.ratios) {
    const int pct = static_cast<int>(std::lround(ratio * 100.0));
    const fs::path rdir = fs::path(s.out_dir) / ("ratio_" + std::to_string(pct));
    const fs::path summary_path = rdir / "summary.json";
    if (valid_summary(summary_path)) {
      out << "ratio " << ratio << ": existing summary, skipping\n";
    } else {
      fs::create_directories(rdir);
      PretrainArgs p;
      p.method = "smae";
      p.ratio = ratio;
      p.ratio_set = true;
      p.data_path = s.data_path;
      p.out_dir = (rdir / "pretrain").string();
      p.model = s.model;
      p.epochs = s.pre_epochs;
      p.batch = s.batch;
      p.lr = s.lr;
      p.seed = s.seed;
      p.seed_set = s.seed_set;
      ssl::PretrainOutput pre = run_pretrain(p, out, err);

      FinetuneArgs f;
      f.init = (rdir / "pretrain" / "checkpoint.smck").string();
      f.mode = "full";
      f.fraction = s.fraction;
      f.data_path = s.data_path;
      f.out_dir = rdir.string();
      f.label = "smae-r" + std::to_string(pct);
      f.model = s.model;
      f.max_epochs = s.ft_max_epochs;
      f.batch = s.batch;
      f.seed = s.seed;
      f.seed_set = s.seed_set;
      cmd_finetune(f, out);

      // fold the pretrain quality into the summary for ranking
      std::ifstream in(summary_path);
      json j;
      in >> j;
      j["ratio"] = ratio;
      j["maskedMSE"] = pre.best_val;
      j["preBestEpoch"] = pre.best_epoch;
      write_text(summary_path, j.dump(2) + "\n");
    }

    std::ifstream in(summary_path);
    json j;
    in >> j;
    rows.push_back({ratio, j.value("maskedMSE", NAN), j.at("finalMAE").get<double>(),
                    j.value("r2", NAN), j.at("epochsToConverge").get<int64_t>()});
  }

  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.mae != b.mae) return a.mae < b.mae;
    return a.ratio < b.ratio;
  });

  std::ostringstream csv;
  csv << "# config " << sweep_cfg.dump() << "\n";
  csv << "rank,ratio,maskedMSE,finalMAE,r2,epochsToConverge\n";
  csv.precision(10);
  for (size_t i = 0; i < rows.size(); ++i)
    csv << i + 1 << ',' << rows[i].ratio << ',' << rows[i].masked_mse << ',' << rows[i].mae << ','
        << rows[i].r2 << ',' << rows[i].epochs << "\n";
  write_text(fs::path(s.out_dir) / "sweep.csv", csv.str());

  out << "rank  ratio  maskedMSE   finalMAE    epochs\n";
  for (size_t i = 0; i < rows.size(); ++i) {
    char line[120];
    std::snprintf(line, sizeof line, "%4zu  %5.2f  %9.4f  %9.4f  %8lld\n", i + 1, rows[i].ratio,
                  rows[i].masked_mse, rows[i].mae, static_cast<long long>(rows[i].epochs));
    out << line;
  }
  out << "wrote " << (fs::path(s.out_dir) / "sweep.csv").string() << "\n";
}

void cmd_report(const std::string& runs_dir, std::ostream& out) {
  if (!fs::exists(runs_dir)) throw std::invalid_argument("no such directory: " + runs_dir);
  std::vector<tasks::RunSummary> runs;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(runs_dir))
    if (entry.is_regular_file() && entry.path().filename() == "summary.json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::ifstream in(path);
    json j;
    try {
      in >> j;
    } catch (const json::parse_error&) {
      continue;
    }
    if (!j.contains("label") || !j.contains("finalMAE")) continue;
    tasks::RunSummary r;
    r.label = j.at("label").get<std::string>();
    r.dataset = j.value("dataset", std::string{});
    r.seed = j.value("seed", uint64_t{0});
    r.test_mae = j.at("finalMAE").is_null() ? NAN : j.at("finalMAE").get<double>();
    r.test_r2 = j.value("r2", json()).is_null() ? NAN : j.at("r2").get<double>();
    r.epochs_to_converge = j.value("epochsToConverge", int64_t{0});
    r.converged = j.value("converged", false);
    runs.push_back(std::move(r));
  }
  if (runs.empty()) throw std::invalid_argument("no runs found under " + runs_dir);

  tasks::Comparison cmp = tasks::compare_runs(runs);
  out << tasks::comparison_table(cmp);
  std::ostringstream csv;
  csv << "# aggregated from " << runs.size() << " runs under " << runs_dir << "\n";
  csv << tasks::comparison_csv(cmp);
  write_text(fs::path(runs_dir) / "report.csv", csv.str());
  out << "wrote " << (fs::path(runs_dir) / "report.csv").string() << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"surface masked-autoencoder workbench"};
  app.require_subcommand(1);

  // geom-check
  int gc_level = 0;
  int gc_patch_level = INT32_MIN;
  auto* gc = app.add_subcommand("geom-check", "build and validate icosphere geometry");
  gc->add_option("--level", gc_level, "data icosphere level")->required();
  gc->add_option("--patch-level", gc_patch_level, "patch icosphere level (default level-3)");
  gc->callback([&] { cmd_geom_check(gc_level, gc_patch_level, out); });

  // gen-data
  GenArgs ga;
  auto* gd = app.add_subcommand("gen-data", "generate a synthetic surface dataset");
  gd->add_option("--n", ga.n, "subject count (>= 10)");
  gd->add_option("--level", ga.level, "data icosphere level");
  gd->add_option("--channels", ga.channels, "channels per vertex");
  gd->add_option("--snr", ga.snr, "signal-to-noise ratio (inf = noiseless)");
  gd->add_option("--train", ga.train, "train split fraction");
  gd->add_option("--val", ga.val, "validation split fraction");
  gd->add_option("--test", ga.test, "test split fraction");
  gd->add_option("--bins", ga.bins, "phenotype bins for the stratified split");
  auto* gd_seed = gd->add_option("--seed", ga.seed, "generator seed");
  gd->add_option("--out", ga.out_path, "output .ssrf path")->required();
  gd->callback([&] {
    ga.seed_set = gd_seed->count() > 0;
    cmd_gen_data(ga, out);
  });

  // pretrain
  PretrainArgs pa;
  auto* pt = app.add_subcommand("pretrain", "self-supervised pretraining (smae or mpp)");
  pt->add_option("--method", pa.method, "smae | mpp");
  auto* pt_ratio = pt->add_option("--ratio", pa.ratio, "masking ratio in (0,1)");
  pt->add_option("--data", pa.data_path, "dataset .ssrf")->required()->check(CLI::ExistingFile);
  pt->add_option("--out", pa.out_dir, "output directory")->required();
  pa.model.attach(pt);
  pt->add_option("--epochs", pa.epochs, "training epochs");
  pt->add_option("--batch", pa.batch, "batch size");
  pt->add_option("--lr", pa.lr, "learning rate");
  pt->add_option("--momentum", pa.momentum, "SGD momentum");
  auto* pt_seed = pt->add_option("--seed", pa.seed, "run seed");
  pt->callback([&] {
    pa.ratio_set = pt_ratio->count() > 0;
    pa.seed_set = pt_seed->count() > 0;
    run_pretrain(pa, out, err);
  });

  // finetune
  FinetuneArgs fa;
  auto* ft = app.add_subcommand("finetune", "supervised training (scratch/finetune/probe)");
  ft->add_option("--init", fa.init, "checkpoint path or 'none'");
  ft->add_option("--mode", fa.mode, "full | probe");
  ft->add_option("--fraction", fa.fraction, "stratified training-data fraction (0,1]");
  ft->add_option("--data", fa.data_path, "dataset .ssrf")->required()->check(CLI::ExistingFile);
  ft->add_option("--out", fa.out_dir, "output directory")->required();
  ft->add_option("--label", fa.label, "run label for reports");
  fa.model.attach(ft);
  ft->add_option("--max-epochs", fa.max_epochs, "epoch budget");
  ft->add_option("--patience", fa.patience, "early-stop patience");
  ft->add_option("--batch", fa.batch, "batch size");
  ft->add_option("--lr", fa.lr, "learning rate");
  ft->add_option("--momentum", fa.momentum, "SGD momentum");
  auto* ft_seed = ft->add_option("--seed", fa.seed, "run seed");
  ft->callback([&] {
    fa.seed_set = ft_seed->count() > 0;
    cmd_finetune(fa, out);
  });

  // sweep
  SweepArgs sa;
  auto* sw = app.add_subcommand("sweep", "masking-ratio sweep: pretrain + finetune per ratio");
  sw->add_option("--ratios", sa.ratios, "comma-separated masking ratios")->delimiter(',');
  sw->add_option("--data", sa.data_path, "dataset .ssrf")->required()->check(CLI::ExistingFile);
  sw->add_option("--out", sa.out_dir, "output directory")->required();
  sa.model.attach(sw);
  sw->add_option("--pre-epochs", sa.pre_epochs, "pretraining epochs");
  sw->add_option("--ft-max-epochs", sa.ft_max_epochs, "finetune epoch budget");
  sw->add_option("--batch", sa.batch, "batch size");
  sw->add_option("--lr", sa.lr, "pretraining learning rate");
  sw->add_option("--fraction", sa.fraction, "finetune data fraction");
  auto* sw_seed = sw->add_option("--seed", sa.seed, "run seed");
  sw->callback([&] {
    sa.seed_set = sw_seed->count() > 0;
    cmd_sweep(sa, out, err);
  });

  // report
  std::string report_dir;
  auto* rp = app.add_subcommand("report", "aggregate summary.json files into a comparison");
  rp->add_option("--runs", report_dir, "directory holding run outputs")->required();
  rp->callback([&] { cmd_report(report_dir, out); });

  try {
    app.parse(argc, argv);
    return 0;
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace smae::cli
