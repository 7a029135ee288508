#include "smae/ssl_train.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "smae/checkpoint.hpp"

namespace smae::ssl {

using synthcortex::SplitTag;
using synthcortex::SurfaceDataset;
using tensor::Tensor;
using tensor::Var;

std::string method_name(Method m) { return m == Method::smae ? "smae" : "mpp"; }

std::string metrics_csv(const std::vector<PretrainEpoch>& rows) {
  std::ostringstream os;
  os << "epoch,trainLoss,valMaskedMSE,wallClockSec\n";
  os.precision(10);
  for (const auto& r : rows)
    os << r.epoch << ',' << r.train_loss << ',' << r.val_mse << ',' << r.wall_sec << "\n";
  return os.str();
}

namespace {

struct Sample {
  Tensor<float> x;       // normalized vertex map [V, C]
  Tensor<float> tokens;  // patchified [N, 45*C]
};

std::vector<Sample> load_split(const SurfaceDataset& ds, SplitTag tag,
                               const geodesy::PatchTable& table) {
  std::vector<Sample> out;
  for (int64_t i : ds.indices_of(tag)) {
    synthcortex::SurfaceSubject subj = ds.subjects[static_cast<size_t>(i)];
    synthcortex::normalize(subj);
    Tensor<float> tokens = sit::patchify(subj.x, table);
    out.push_back({std::move(subj.x), std::move(tokens)});
  }
  return out;
}

void dump_recon(const std::filesystem::path& dir, int64_t epoch, const SurfaceDataset& ds,
                const Sample& subject, const Tensor<float>& recon_tokens,
                const geodesy::PatchTable& table, const sit::SitConfig& cfg, Method method) {
  SurfaceDataset dump;
  dump.data_level = cfg.data_level;
  dump.patch_level = cfg.patch_level;
  dump.channels = cfg.channels;
  nlohmann::json prov{{"kind", "recon-dump"}, {"method", method_name(method)}, {"epoch", epoch}};
  prov["source"] =
      ds.provenance.empty() ? nlohmann::json() : nlohmann::json::parse(ds.provenance);
  dump.provenance = prov.dump();
  synthcortex::SurfaceSubject target;
  target.id = "target";
  target.split = SplitTag::val;
  target.x = subject.x;
  synthcortex::SurfaceSubject recon;
  recon.id = "recon";
  recon.split = SplitTag::val;
  recon.x = sit::unpatchify(recon_tokens, table, cfg.channels);
  dump.subjects = {std::move(target), std::move(recon)};

  char name[32];
  std::snprintf(name, sizeof name, "epoch_%03lld.ssrf", static_cast<long long>(epoch));
  synthcortex::write_dataset(dump, dir / name);
}

}  // namespace

PretrainOutput pretrain(const SurfaceDataset& dataset, const geodesy::PatchTable& table,
                        const sit::SitConfig& cfg, const PretrainConfig& pc) {
  cfg.validate();
  if (dataset.data_level != cfg.data_level || dataset.channels != cfg.channels)
    throw std::invalid_argument("dataset does not match model config (level/channels)");
  if (pc.epochs < 1 || pc.batch < 1) throw std::invalid_argument("epochs and batch must be >= 1");
  if (pc.method == Method::smae && !(pc.ratio > 0.0 && pc.ratio < 1.0))
    throw std::invalid_argument("masking ratio must lie in (0,1), got " + std::to_string(pc.ratio));

  const std::vector<Sample> train = load_split(dataset, SplitTag::train, table);
  const std::vector<Sample> val = load_split(dataset, SplitTag::val, table);
  if (train.empty() || val.empty())
    throw std::invalid_argument("pretraining requires non-empty train and val splits");

  const SslContext<float> ctx = make_context<float>(cfg, table);
  const int64_t n_patches = table.patch_count();
  Rng rng(pc.seed);

  Rng init_rng = rng.fork(1);
  PretrainOutput out;
  out.cfg = cfg;
  if (pc.method == Method::smae)
    out.smae = init_smae<float>(cfg, init_rng);
  else
    out.mpp = init_mpp<float>(cfg, init_rng);

  // Fixed validation plans/corruptions: the val metric is comparable across
  // epochs and the epoch dumps show the same holes filling in.
  std::vector<MaskPlan> val_plans;
  std::vector<Tensor<float>> val_corrupted;
  {
    Rng vrng = rng.fork(2);
    for (const Sample& s : val) {
      if (pc.method == Method::smae) {
        val_plans.push_back(sample_mask(n_patches, pc.ratio, vrng));
      } else {
        val_corrupted.push_back(mpp_corrupt(s.tokens, vrng).first);
      }
    }
  }

  const bool writing = !pc.out_dir.empty();
  if (writing) {
    std::filesystem::create_directories(pc.out_dir / "recon");
    out.checkpoint_path = pc.out_dir / "checkpoint.smck";
  }

  SmaeP<Tensor<float>> best_smae;
  MppP<Tensor<float>> best_mpp;

  auto validate = [&](int64_t epoch) {
    double sum = 0.0;
    Tensor<float> first_recon;
    for (size_t i = 0; i < val.size(); ++i) {
      tensor::Tape<float> tape;
      Var<float> loss;
      Var<float> recon;
      if (pc.method == Method::smae) {
        auto m = mount(tape, out.smae, false);
        auto fwd = smae_forward(tape, m, ctx, val[i].x, val_plans[i]);
        loss = fwd.loss;
        recon = fwd.recon;
      } else {
        auto m = mount(tape, out.mpp, false);
        auto fwd = mpp_forward(tape, m, ctx, val_corrupted[i], val[i].tokens);
        loss = fwd.loss;
        recon = fwd.recon;
      }
      sum += static_cast<double>(loss.value()[0]);
      if (i == 0) first_recon = recon.value();
    }
    if (writing)
      dump_recon(pc.out_dir / "recon", epoch, dataset, val[0], first_recon, table, cfg, pc.method);
    return sum / static_cast<double>(val.size());
  };

  tensor::SgdState<float> opt({pc.lr, pc.momentum});

  for (int64_t epoch = 0; epoch <= pc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double train_loss = NAN;

    if (epoch > 0) {
      std::vector<int64_t> order(train.size());
      std::iota(order.begin(), order.end(), 0);
      Rng erng = rng.fork(100 + static_cast<uint64_t>(epoch));
      erng.shuffle(order);

      double loss_sum = 0.0;
      for (size_t at = 0; at < order.size(); at += static_cast<size_t>(pc.batch)) {
        const size_t hi = std::min(order.size(), at + static_cast<size_t>(pc.batch));
        tensor::Tape<float> tape;
        SmaeP<Var<float>> msmae;
        MppP<Var<float>> mmpp;
        std::vector<Tensor<float>*> params;
        if (pc.method == Method::smae) {
          msmae = mount(tape, out.smae);
          params = sit::param_ptrs<float>(out.smae);
        } else {
          mmpp = mount(tape, out.mpp);
          params = sit::param_ptrs<float>(out.mpp);
        }

        Var<float> batch_loss;
        for (size_t k = at; k < hi; ++k) {
          const Sample& s = train[static_cast<size_t>(order[k])];
          Var<float> loss;
          if (pc.method == Method::smae) {
            loss = smae_forward(tape, msmae, ctx, s.x, [&] {
                     Rng mrng = erng.fork(static_cast<uint64_t>(order[k]));
                     return sample_mask(n_patches, pc.ratio, mrng);
                   }()).loss;
          } else {
            Rng mrng = erng.fork(static_cast<uint64_t>(order[k]));
            Tensor<float> corrupted = mpp_corrupt(s.tokens, mrng).first;
            loss = mpp_forward(tape, mmpp, ctx, corrupted, s.tokens).loss;
          }
          batch_loss = k == at ? loss : batch_loss + loss;
        }
        batch_loss = (1.0 / static_cast<double>(hi - at)) * batch_loss;
        const double lv = static_cast<double>(batch_loss.value()[0]);
        if (!std::isfinite(lv))
          throw std::runtime_error("non-finite pretraining loss at epoch " +
                                   std::to_string(epoch) + " (method " + method_name(pc.method) +
                                   ", seed " + std::to_string(pc.seed) + ")");
        tape.backward(batch_loss);
        std::vector<Tensor<float>> grads;
        if (pc.method == Method::smae)
          grads = sit::collect_grads(tape, msmae);
        else
          grads = sit::collect_grads(tape, mmpp);
        opt.step(params, grads);
        loss_sum += lv * static_cast<double>(hi - at);
      }
      train_loss = loss_sum / static_cast<double>(train.size());
    }

    const double val_mse = validate(epoch);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.rows.push_back({epoch, train_loss, val_mse, wall});

    if (val_mse < out.best_val) {
      out.best_val = val_mse;
      out.best_epoch = epoch;
      if (pc.method == Method::smae)
        best_smae = out.smae;
      else
        best_mpp = out.mpp;
    }
  }

  out.skipped_steps = opt.skipped_steps();
  if (pc.method == Method::smae)
    out.smae = std::move(best_smae);
  else
    out.mpp = std::move(best_mpp);

  if (writing) {
    nlohmann::json prov{{"method", method_name(pc.method)},
                        {"seed", pc.seed},
                        {"epochs", pc.epochs},
                        {"batch", pc.batch},
                        {"lr", pc.lr},
                        {"momentum", pc.momentum},
                        {"bestEpoch", out.best_epoch},
                        {"bestValMSE", out.best_val}};
    if (pc.method == Method::smae) prov["ratio"] = pc.ratio;
    if (pc.method == Method::smae)
      checkpoint::save_model(out.checkpoint_path, cfg, prov, out.smae);
    else
      checkpoint::save_model(out.checkpoint_path, cfg, prov, out.mpp);

    nlohmann::json echo = checkpoint::config_to_json(cfg);
    for (const auto& [key, value] : prov.items()) echo[key] = value;
    std::ofstream csv(pc.out_dir / "metrics.csv");
    csv << "# config " << echo.dump() << "\n" << metrics_csv(out.rows);
    if (!csv) throw std::runtime_error("failed to write " + (pc.out_dir / "metrics.csv").string());
  }
  return out;
}

}  // namespace smae::ssl
