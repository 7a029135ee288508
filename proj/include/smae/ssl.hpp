#pragma once

#include <numeric>
#include <vector>

#include "smae/geodesy.hpp"
#include "smae/rng.hpp"
#include "smae/sit.hpp"
#include "smae/tensor.hpp"

namespace smae::ssl {

using sit::SitConfig;
using tensor::Shape;
using tensor::Tensor;
using tensor::Var;

// Random mask over patch indices 0..N-1 (sequence slot = patch index + 1;
// the regression token at slot 0 is never masked). perm is the shuffle with
// the masked-last convention: perm[0..u) unmasked, perm[u..N) masked;
// inverse[perm[t]] = t.
struct MaskPlan {
  int64_t n = 0;
  double ratio = 0.0;
  std::vector<int64_t> perm;
  std::vector<int64_t> inverse;
  std::vector<int64_t> unmasked;  // = perm[0..u), in shuffle order
  std::vector<int64_t> masked;    // = perm[u..n), in shuffle order

  int64_t masked_count() const { return static_cast<int64_t>(masked.size()); }
  int64_t unmasked_count() const { return static_cast<int64_t>(unmasked.size()); }
};

inline MaskPlan sample_mask(int64_t n, double ratio, Rng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw std::invalid_argument("mask ratio must be in (0,1), got " + std::to_string(ratio));
  const int64_t m = round_count(ratio * static_cast<double>(n));
  if (m < 1 || m >= n)
    throw std::invalid_argument("degenerate mask: " + std::to_string(m) + " of " +
                                std::to_string(n) + " patches masked");
  MaskPlan plan;
  plan.n = n;
  plan.ratio = ratio;
  plan.perm.resize(static_cast<size_t>(n));
  std::iota(plan.perm.begin(), plan.perm.end(), int64_t{0});
  rng.shuffle(plan.perm);
  plan.inverse.resize(static_cast<size_t>(n));
  for (int64_t t = 0; t < n; ++t) plan.inverse[static_cast<size_t>(plan.perm[static_cast<size_t>(t)])] = t;
  plan.unmasked.assign(plan.perm.begin(), plan.perm.end() - m);
  plan.masked.assign(plan.perm.end() - m, plan.perm.end());
  return plan;
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

template <typename H>
struct SmaeP {
  sit::EncoderP<H> encoder;
  H mask_token;  // [1, D], zero-initialized but learnable
  std::vector<sit::BlockP<H>> dec_blocks;
  sit::LinearP<H> out_proj;  // D -> 45*C
};

template <typename H>
struct MppP {
  sit::EncoderP<H> encoder;
  sit::LinearP<H> out_proj;  // D -> 45*C
};

template <typename H, typename F>
void for_each_param(SmaeP<H>& p, const std::string& prefix, F&& f) {
  for_each_param(p.encoder, prefix + ".encoder", f);
  f(prefix + ".mask_token", p.mask_token);
  for (size_t i = 0; i < p.dec_blocks.size(); ++i)
    for_each_param(p.dec_blocks[i], prefix + ".dec_blocks." + std::to_string(i), f);
  for_each_param(p.out_proj, prefix + ".out_proj", f);
}

template <typename H, typename F>
void for_each_param(MppP<H>& p, const std::string& prefix, F&& f) {
  for_each_param(p.encoder, prefix + ".encoder", f);
  for_each_param(p.out_proj, prefix + ".out_proj", f);
}

template <typename S>
SmaeP<Tensor<S>> init_smae(const SitConfig& cfg, Rng& rng) {
  SmaeP<Tensor<S>> m;
  m.encoder = sit::init_encoder<S>(cfg, rng);
  m.mask_token = Tensor<S>::zeros({1, cfg.hidden_dim});
  for (int l = 0; l < cfg.decoder_layers(); ++l)
    m.dec_blocks.push_back(sit::init_block<S>(cfg, rng));
  m.out_proj = sit::init_linear<S>(cfg.hidden_dim, cfg.patch_width(), rng);
  return m;
}

template <typename S>
MppP<Tensor<S>> init_mpp(const SitConfig& cfg, Rng& rng) {
  MppP<Tensor<S>> m;
  m.encoder = sit::init_encoder<S>(cfg, rng);
  m.out_proj = sit::init_linear<S>(cfg.hidden_dim, cfg.patch_width(), rng);
  return m;
}

template <typename S>
SmaeP<Var<S>> mount(tensor::Tape<S>& t, const SmaeP<Tensor<S>>& p, bool trainable = true) {
  SmaeP<Var<S>> out;
  out.encoder = sit::mount(t, p.encoder, trainable);
  out.mask_token = t.leaf(p.mask_token, trainable);
  for (const auto& b : p.dec_blocks) out.dec_blocks.push_back(sit::mount(t, b, trainable));
  out.out_proj = sit::mount(t, p.out_proj, trainable);
  return out;
}

template <typename S>
MppP<Var<S>> mount(tensor::Tape<S>& t, const MppP<Tensor<S>>& p, bool trainable = true) {
  return {sit::mount(t, p.encoder, trainable), sit::mount(t, p.out_proj, trainable)};
}

// Positional encodings and geometry shared by every forward call of a run.
template <typename S>
struct SslContext {
  SitConfig cfg;
  const geodesy::PatchTable* table = nullptr;
  Tensor<S> pos_enc;  // (N+1) x D
  Tensor<S> pos_dec;  // (N+1) x D

  int64_t patch_count() const { return table->patch_count(); }
};

template <typename S>
SslContext<S> make_context(const SitConfig& cfg, const geodesy::PatchTable& table) {
  cfg.validate();
  if (table.verts_per_patch != sit::kVertsPerPatch)
    throw std::invalid_argument("patch table depth must be 3 (45 vertices per patch)");
  SslContext<S> ctx;
  ctx.cfg = cfg;
  ctx.table = &table;
  ctx.pos_enc = sit::sincos_posenc<S>(table.patch_count() + 1, cfg.hidden_dim);
  ctx.pos_dec = sit::sincos_posenc<S>(table.patch_count() + 1, cfg.hidden_dim);
  return ctx;
}

// ---------------------------------------------------------------------------
// sMAE forward
// ---------------------------------------------------------------------------

// Rebuild the full-length patch sequence for the decoder: encoder outputs
// (in shuffle order, unmasked first) plus mask tokens for the masked slots,
// unshuffled so row i again corresponds to patch i.
template <typename S>
Var<S> reassemble_sequence(Var<S> enc_patch_rows, Var<S> mask_token, const MaskPlan& plan) {
  if (enc_patch_rows.value().shape()[0] != plan.unmasked_count())
    throw std::invalid_argument("reassemble_sequence: row count does not match plan");
  const int64_t d = enc_patch_rows.value().shape()[1];
  Var<S> tiled = expand(mask_token, {plan.masked_count(), d});
  Var<S> shuffled = tensor::concat<S>({enc_patch_rows, tiled}, 0);
  return gather_rows(shuffled, plan.inverse);
}

template <typename S>
struct SmaeOut {
  Var<S> recon;       // [N, 45*C]
  Var<S> loss;        // scalar, masked patches only
  Var<S> enc_tokens;  // [u+1, D] encoder output (regression token first)
};

// patchify -> embed(+pos) -> drop masked -> encode -> reinsert mask tokens ->
// unshuffle -> +decoder pos -> decode -> project; MSE on masked patches only.
template <typename S>
SmaeOut<S> smae_forward(tensor::Tape<S>& tape, const SmaeP<Var<S>>& model,
                        const SslContext<S>& ctx, const Tensor<S>& x, const MaskPlan& plan) {
  if (plan.n != ctx.patch_count())
    throw std::invalid_argument("mask plan is for " + std::to_string(plan.n) +
                                " patches, dataset has " + std::to_string(ctx.patch_count()));
  Tensor<S> tokens = sit::patchify(x, *ctx.table);
  Var<S> target = tape.constant(tokens);
  Var<S> seq = sit::embed(model.encoder, tape.constant(std::move(tokens)),
                          tape.constant(ctx.pos_enc));

  std::vector<int64_t> keep;
  keep.reserve(static_cast<size_t>(plan.unmasked_count() + 1));
  keep.push_back(0);
  for (int64_t p : plan.unmasked) keep.push_back(p + 1);
  Var<S> enc_in = gather_rows(seq, std::move(keep));
  Var<S> enc_out = sit::encoder_forward(model.encoder.blocks, enc_in, ctx.cfg.heads);

  auto parts = split(enc_out, {1, plan.unmasked_count()}, 0);
  Var<S> dec_patches = reassemble_sequence(parts[1], model.mask_token, plan);
  Var<S> dec_seq = tensor::concat<S>({parts[0], dec_patches}, 0) + tape.constant(ctx.pos_dec);
  Var<S> dec_out = sit::encoder_forward(model.dec_blocks, dec_seq, ctx.cfg.heads);

  Var<S> recon = sit::linear(model.out_proj, split(dec_out, {1, plan.n}, 0)[1]);
  Var<S> loss = masked_mse(recon, target, plan.masked);
  return {recon, loss, enc_out};
}

// ---------------------------------------------------------------------------
// MPP corruption and forward
// ---------------------------------------------------------------------------

struct CorruptionRecord {
  std::vector<int64_t> masked;                      // zeroed rows (40%)
  std::vector<std::pair<int64_t, int64_t>> swapped; // (dest, source) pairs (5%)
  std::vector<int64_t> kept;                        // flagged but unchanged (5%)
  std::vector<int64_t> untouched;                   // the remaining 50%
};

// Corrupt round(0.5*N) patches of a patch-space token array: 40% of N zeroed
// ("empty" tokens), 5% replaced by another patch's clean row, 5% kept as-is.
// The kept count absorbs the rounding slack so the three sets always total
// round(0.5*N).
template <typename S>
std::pair<Tensor<S>, CorruptionRecord> mpp_corrupt(const Tensor<S>& tokens, Rng& rng) {
  if (tokens.rank() != 2) throw std::invalid_argument("mpp_corrupt expects rank-2 tokens");
  const int64_t n = tokens.shape()[0];
  if (n < 20)
    throw std::invalid_argument("MPP needs at least 20 patches, got " + std::to_string(n));
  const int64_t total = round_count(0.50 * static_cast<double>(n));
  const int64_t n_masked = round_count(0.40 * static_cast<double>(n));
  const int64_t n_swapped = round_count(0.05 * static_cast<double>(n));
  const int64_t n_kept = total - n_masked - n_swapped;

  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), int64_t{0});
  rng.shuffle(order);
  CorruptionRecord rec;
  rec.masked.assign(order.begin(), order.begin() + n_masked);
  rec.untouched.assign(order.begin() + total, order.end());

  const int64_t cols = tokens.shape()[1];
  Tensor<S> out = tokens;
  for (int64_t i : rec.masked)
    for (int64_t j = 0; j < cols; ++j) out.at(i, j) = S{0};
  for (int64_t k = 0; k < n_swapped; ++k) {
    const int64_t dest = order[static_cast<size_t>(n_masked + k)];
    int64_t src = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n - 1)));
    if (src >= dest) ++src;  // uniform over the other n-1 patches
    rec.swapped.emplace_back(dest, src);
    for (int64_t j = 0; j < cols; ++j) out.at(dest, j) = tokens.at(src, j);
  }
  rec.kept.assign(order.begin() + n_masked + n_swapped, order.begin() + total);
  (void)n_kept;
  return {std::move(out), std::move(rec)};
}

template <typename S>
struct MppOut {
  Var<S> recon;  // [N, 45*C]
  Var<S> loss;   // scalar, all patches
};

// Full corrupted sequence through the encoder; reconstruction loss over all
// N patches against the clean tokens.
template <typename S>
MppOut<S> mpp_forward(tensor::Tape<S>& tape, const MppP<Var<S>>& model, const SslContext<S>& ctx,
                      const Tensor<S>& corrupted_tokens, const Tensor<S>& clean_tokens) {
  if (corrupted_tokens.shape() != clean_tokens.shape())
    throw std::invalid_argument("mpp_forward: corrupted/clean shape mismatch");
  const int64_t n = corrupted_tokens.shape()[0];
  if (n != ctx.patch_count())
    throw std::invalid_argument("mpp_forward: token count does not match patch table");
  Var<S> seq = sit::embed(model.encoder, tape.constant(corrupted_tokens),
                          tape.constant(ctx.pos_enc));
  Var<S> out = sit::encoder_forward(model.encoder.blocks, seq, ctx.cfg.heads);
  Var<S> recon = sit::linear(model.out_proj, split(out, {1, n}, 0)[1]);
  Var<S> loss = mse(recon, tape.constant(clean_tokens));
  return {recon, loss};
}

}  // namespace smae::ssl
