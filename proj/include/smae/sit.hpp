#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "smae/geodesy.hpp"
#include "smae/tensor.hpp"

namespace smae::sit {

using tensor::Shape;
using tensor::Tensor;
using tensor::Var;

// Patches are always the 45 data-level vertices under one coarse face, i.e.
// the data level sits exactly three subdivisions below the patch level.
constexpr int kPatchDepth = 3;
constexpr int kVertsPerPatch = 45;

struct SitConfig {
  int patch_level = 3;
  int data_level = 6;
  int channels = 4;
  int hidden_dim = 192;
  int layers = 12;
  int heads = 3;
  int ffn_mult = 4;

  int patch_width() const { return kVertsPerPatch * channels; }
  int decoder_layers() const { return std::max(1, layers / 4); }

  std::vector<std::string> issues() const {
    std::vector<std::string> out;
    if (patch_level < 0) out.push_back("patchLevel must be >= 0");
    if (data_level != patch_level + kPatchDepth)
      out.push_back("dataLevel must be patchLevel + 3, got " + std::to_string(data_level));
    if (channels < 1) out.push_back("channels must be >= 1");
    if (layers < 1) out.push_back("layers must be >= 1");
    if (hidden_dim < 1) out.push_back("hiddenDim must be >= 1");
    if (hidden_dim % 2 != 0) out.push_back("hiddenDim must be even (sine/cosine pairs)");
    if (heads < 1 || (heads >= 1 && hidden_dim % heads != 0))
      out.push_back("hiddenDim " + std::to_string(hidden_dim) + " must be divisible by heads " +
                    std::to_string(heads));
    if (ffn_mult < 1) out.push_back("ffnMult must be >= 1");
    return out;
  }

  // All problems at once, so a bad config is reported as one complete list.
  void validate() const {
    const std::vector<std::string> bad = issues();
    if (bad.empty()) return;
    std::string msg = "invalid model config:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw std::invalid_argument(msg);
  }
};

// ---------------------------------------------------------------------------
// Patch <-> surface plumbing
// ---------------------------------------------------------------------------

// Row i = channel-major concatenation of X at patch i's 45 vertex indices:
// row[c*45 + j] = X[patch[j], c].
template <typename S>
Tensor<S> patchify(const Tensor<S>& x, const geodesy::PatchTable& table) {
  if (x.rank() != 2 || x.shape()[0] != table.data_vertex_count())
    throw std::invalid_argument("patchify: surface map must be " +
                                std::to_string(table.data_vertex_count()) + " x C, got " +
                                tensor::shape_str(x.shape()));
  const int64_t channels = x.shape()[1];
  const int64_t vp = table.verts_per_patch;
  Tensor<S> out(Shape{table.patch_count(), vp * channels});
  for (int64_t p = 0; p < table.patch_count(); ++p) {
    const auto& idx = table.patches[static_cast<size_t>(p)];
    S* row = out.data() + p * vp * channels;
    for (int64_t c = 0; c < channels; ++c)
      for (int64_t j = 0; j < vp; ++j) row[c * vp + j] = x.at(idx[static_cast<size_t>(j)], c);
  }
  return out;
}

namespace detail {
template <typename S>
struct WideAcc {
  using type = double;
};
template <>
struct WideAcc<double> {
  using type = long double;
};
}  // namespace detail

// Vertex value = mean over all patch slots referencing it. Accumulation runs
// in a wider type so that averaging k identical copies returns the input
// bit-exactly (patchify then unpatchify is the identity).
template <typename S>
Tensor<S> unpatchify(const Tensor<S>& tokens, const geodesy::PatchTable& table,
                     int64_t channels) {
  const int64_t vp = table.verts_per_patch;
  if (tokens.rank() != 2 || tokens.shape()[0] != table.patch_count() ||
      tokens.shape()[1] != vp * channels)
    throw std::invalid_argument("unpatchify: tokens must be " +
                                std::to_string(table.patch_count()) + " x " +
                                std::to_string(vp * channels) + ", got " +
                                tensor::shape_str(tokens.shape()));
  using Acc = typename detail::WideAcc<S>::type;
  const int64_t nv = table.data_vertex_count();
  std::vector<Acc> acc(static_cast<size_t>(nv * channels), Acc{0});
  for (int64_t p = 0; p < table.patch_count(); ++p) {
    const auto& idx = table.patches[static_cast<size_t>(p)];
    const S* row = tokens.data() + p * vp * channels;
    for (int64_t c = 0; c < channels; ++c)
      for (int64_t j = 0; j < vp; ++j)
        acc[static_cast<size_t>(idx[static_cast<size_t>(j)] * channels + c)] +=
            static_cast<Acc>(row[c * vp + j]);
  }
  Tensor<S> out(Shape{nv, channels});
  for (int64_t v = 0; v < nv; ++v)
    for (int64_t c = 0; c < channels; ++c)
      out.at(v, c) = static_cast<S>(acc[static_cast<size_t>(v * channels + c)] /
                                    static_cast<Acc>(table.multiplicity[static_cast<size_t>(v)]));
  return out;
}

// Standard 1-D transformer encoding, sin half then cos half:
// row p = [sin(p*w_0)..sin(p*w_{D/2-1}), cos(p*w_0)..], w_j = 10000^{-2j/D}.
template <typename S>
Tensor<S> sincos_posenc(int64_t length, int64_t dim) {
  if (dim <= 0 || dim % 2 != 0)
    throw std::invalid_argument("positional encoding dim must be even, got " +
                                std::to_string(dim));
  Tensor<S> out(Shape{length, dim});
  const int64_t half = dim / 2;
  for (int64_t p = 0; p < length; ++p)
    for (int64_t j = 0; j < half; ++j) {
      const double w = std::pow(10000.0, -2.0 * static_cast<double>(j) / static_cast<double>(dim));
      const double arg = static_cast<double>(p) * w;
      out.at(p, j) = static_cast<S>(std::sin(arg));
      out.at(p, half + j) = static_cast<S>(std::cos(arg));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter structs, generic over the handle type (Tensor<S> for storage,
// Var<S> once mounted on a tape)
// ---------------------------------------------------------------------------

template <typename H>
struct LinearP {
  H weight;  // [in, out]
  H bias;    // [out]
};

template <typename H>
struct NormP {
  H gain;
  H bias;
};

template <typename H>
struct BlockP {
  NormP<H> ln1;
  LinearP<H> wq, wk, wv, wo;
  NormP<H> ln2;
  LinearP<H> fc1, fc2;
};

template <typename H>
struct EncoderP {
  LinearP<H> patch_embed;
  H reg_token;  // [1, D]
  std::vector<BlockP<H>> blocks;
};

template <typename H>
struct HeadP {
  NormP<H> norm;
  LinearP<H> out;  // D -> 1
};

template <typename H>
struct SitP {
  EncoderP<H> encoder;
  HeadP<H> head;
};

// Deterministic (name, handle) visitation; checkpoint layout and optimizer
// slot order both derive from this.
template <typename H, typename F>
void for_each_param(LinearP<H>& p, const std::string& prefix, F&& f) {
  f(prefix + ".weight", p.weight);
  f(prefix + ".bias", p.bias);
}

template <typename H, typename F>
void for_each_param(NormP<H>& p, const std::string& prefix, F&& f) {
  f(prefix + ".gain", p.gain);
  f(prefix + ".bias", p.bias);
}

template <typename H, typename F>
void for_each_param(BlockP<H>& p, const std::string& prefix, F&& f) {
  for_each_param(p.ln1, prefix + ".ln1", f);
  for_each_param(p.wq, prefix + ".wq", f);
  for_each_param(p.wk, prefix + ".wk", f);
  for_each_param(p.wv, prefix + ".wv", f);
  for_each_param(p.wo, prefix + ".wo", f);
  for_each_param(p.ln2, prefix + ".ln2", f);
  for_each_param(p.fc1, prefix + ".fc1", f);
  for_each_param(p.fc2, prefix + ".fc2", f);
}

template <typename H, typename F>
void for_each_param(EncoderP<H>& p, const std::string& prefix, F&& f) {
  for_each_param(p.patch_embed, prefix + ".patch_embed", f);
  f(prefix + ".reg_token", p.reg_token);
  for (size_t i = 0; i < p.blocks.size(); ++i)
    for_each_param(p.blocks[i], prefix + ".blocks." + std::to_string(i), f);
}

template <typename H, typename F>
void for_each_param(HeadP<H>& p, const std::string& prefix, F&& f) {
  for_each_param(p.norm, prefix + ".norm", f);
  for_each_param(p.out, prefix + ".out", f);
}

template <typename H, typename F>
void for_each_param(SitP<H>& p, const std::string& prefix, F&& f) {
  for_each_param(p.encoder, prefix + ".encoder", f);
  for_each_param(p.head, prefix + ".head", f);
}

template <typename M>
int64_t param_count(M& model) {
  int64_t n = 0;
  for_each_param(model, "", [&n](const std::string&, auto& t) { n += t.numel(); });
  return n;
}

// ---------------------------------------------------------------------------
// Initialization (weights N(0, 0.02), biases 0, norm gains 1)
// ---------------------------------------------------------------------------

constexpr double kInitStd = 0.02;

template <typename S>
LinearP<Tensor<S>> init_linear(int64_t in, int64_t out, Rng& rng) {
  return {tensor::randn<S>({in, out}, rng, kInitStd), Tensor<S>::zeros({out})};
}

template <typename S>
NormP<Tensor<S>> init_norm(int64_t dim) {
  return {Tensor<S>::full({dim}, S{1}), Tensor<S>::zeros({dim})};
}

template <typename S>
BlockP<Tensor<S>> init_block(const SitConfig& cfg, Rng& rng) {
  const int64_t d = cfg.hidden_dim;
  const int64_t ffn = static_cast<int64_t>(cfg.ffn_mult) * d;
  return {init_norm<S>(d),         init_linear<S>(d, d, rng), init_linear<S>(d, d, rng),
          init_linear<S>(d, d, rng), init_linear<S>(d, d, rng), init_norm<S>(d),
          init_linear<S>(d, ffn, rng), init_linear<S>(ffn, d, rng)};
}

template <typename S>
EncoderP<Tensor<S>> init_encoder(const SitConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderP<Tensor<S>> enc;
  enc.patch_embed = init_linear<S>(cfg.patch_width(), cfg.hidden_dim, rng);
  enc.reg_token = tensor::randn<S>({1, cfg.hidden_dim}, rng, kInitStd);
  for (int l = 0; l < cfg.layers; ++l) enc.blocks.push_back(init_block<S>(cfg, rng));
  return enc;
}

template <typename S>
HeadP<Tensor<S>> init_head(const SitConfig& cfg, Rng& rng) {
  return {init_norm<S>(cfg.hidden_dim), init_linear<S>(cfg.hidden_dim, 1, rng)};
}

template <typename S>
SitP<Tensor<S>> init_sit(const SitConfig& cfg, Rng& rng) {
  return {init_encoder<S>(cfg, rng), init_head<S>(cfg, rng)};
}

// ---------------------------------------------------------------------------
// Mounting storage onto a tape
// ---------------------------------------------------------------------------

// trainable=false mounts parameters as constants: they collect no gradients
// and backward skips everything upstream of them (linear probing's frozen
// encoder costs no backward work at all).
template <typename S>
LinearP<Var<S>> mount(tensor::Tape<S>& t, const LinearP<Tensor<S>>& p, bool trainable = true) {
  return {t.leaf(p.weight, trainable), t.leaf(p.bias, trainable)};
}

template <typename S>
NormP<Var<S>> mount(tensor::Tape<S>& t, const NormP<Tensor<S>>& p, bool trainable = true) {
  return {t.leaf(p.gain, trainable), t.leaf(p.bias, trainable)};
}

template <typename S>
BlockP<Var<S>> mount(tensor::Tape<S>& t, const BlockP<Tensor<S>>& p, bool trainable = true) {
  return {mount(t, p.ln1, trainable), mount(t, p.wq, trainable), mount(t, p.wk, trainable),
          mount(t, p.wv, trainable),  mount(t, p.wo, trainable), mount(t, p.ln2, trainable),
          mount(t, p.fc1, trainable), mount(t, p.fc2, trainable)};
}

template <typename S>
EncoderP<Var<S>> mount(tensor::Tape<S>& t, const EncoderP<Tensor<S>>& p, bool trainable = true) {
  EncoderP<Var<S>> out;
  out.patch_embed = mount(t, p.patch_embed, trainable);
  out.reg_token = t.leaf(p.reg_token, trainable);
  for (const auto& b : p.blocks) out.blocks.push_back(mount(t, b, trainable));
  return out;
}

template <typename S>
HeadP<Var<S>> mount(tensor::Tape<S>& t, const HeadP<Tensor<S>>& p, bool trainable = true) {
  return {mount(t, p.norm, trainable), mount(t, p.out, trainable)};
}

template <typename S>
SitP<Var<S>> mount(tensor::Tape<S>& t, const SitP<Tensor<S>>& p, bool trainable = true) {
  return {mount(t, p.encoder, trainable), mount(t, p.head, trainable)};
}

// Gradients for a mounted model, in for_each_param order; zero where a
// parameter did not reach the loss.
template <typename S, typename VM>
std::vector<Tensor<S>> collect_grads(tensor::Tape<S>& tape, VM& mounted) {
  std::vector<Tensor<S>> grads;
  for_each_param(mounted, "", [&](const std::string&, Var<S>& v) {
    grads.push_back(tape.has_grad(v) ? tape.grad(v) : Tensor<S>(v.value().shape()));
  });
  return grads;
}

template <typename S, typename M>
std::vector<Tensor<S>*> param_ptrs(M& model) {
  std::vector<Tensor<S>*> out;
  for_each_param(model, "", [&out](const std::string&, Tensor<S>& t) { out.push_back(&t); });
  return out;
}

// ---------------------------------------------------------------------------
// Forward passes; x is [T, D] or batched [B, T, D] throughout
// ---------------------------------------------------------------------------

template <typename S>
Var<S> linear(const LinearP<Var<S>>& p, Var<S> x) {
  return matmul(x, p.weight) + p.bias;
}

template <typename S>
Var<S> norm(const NormP<Var<S>>& p, Var<S> x) {
  return layer_norm(x, p.gain, p.bias);
}

template <typename S>
Var<S> mhsa(const BlockP<Var<S>>& b, Var<S> x, int heads) {
  const int64_t d = x.shape().back();
  const int64_t dh = d / heads;
  const int axis = static_cast<int>(x.shape().size()) - 1;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<int64_t> head_sizes(static_cast<size_t>(heads), dh);
  auto qs = split(linear(b.wq, x), head_sizes, axis);
  auto ks = split(linear(b.wk, x), head_sizes, axis);
  auto vs = split(linear(b.wv, x), head_sizes, axis);

  std::vector<Var<S>> ctx;
  ctx.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var<S> scores = softmax(scale(matmul(qs[h], transpose(ks[h])), att_scale));
    ctx.push_back(matmul(scores, vs[h]));
  }
  return linear(b.wo, concat(ctx, axis));
}

template <typename S>
Var<S> block_forward(const BlockP<Var<S>>& b, Var<S> x, int heads) {
  Var<S> z = x + mhsa(b, norm(b.ln1, x), heads);
  Var<S> h = linear(b.fc2, gelu(linear(b.fc1, norm(b.ln2, z))));
  return z + h;
}

template <typename S>
Var<S> encoder_forward(const std::vector<BlockP<Var<S>>>& blocks, Var<S> x, int heads) {
  for (const auto& b : blocks) x = block_forward(b, x, heads);
  return x;
}

// Project patch tokens, prepend the regression token, add the positional
// encoding: [N,P] -> [N+1,D] (or batched [B,N,P] -> [B,N+1,D]).
template <typename S>
Var<S> embed(const EncoderP<Var<S>>& enc, Var<S> patch_tokens, Var<S> posenc) {
  Var<S> proj = linear(enc.patch_embed, patch_tokens);
  Var<S> reg = enc.reg_token;
  int axis = 0;
  if (proj.shape().size() == 3) {
    reg = expand(reshape(reg, {1, 1, proj.shape().back()}),
                 {proj.shape()[0], 1, proj.shape().back()});
    axis = 1;
  }
  return tensor::concat<S>({reg, proj}, axis) + posenc;
}

// Prediction head over the regression token (sequence row 0).
template <typename S>
Var<S> head_forward(const HeadP<Var<S>>& head, Var<S> seq) {
  Var<S> row0;
  if (seq.shape().size() == 2) {
    row0 = gather_rows(seq, {0});  // [1, D]
  } else {
    const Shape& s = seq.shape();
    row0 = reshape(split(seq, {1, s[1] - 1}, 1)[0], {s[0], s[2]});  // [B, D]
  }
  return linear(head.out, norm(head.norm, row0));
}

template <typename S>
Var<S> sit_forward(const SitP<Var<S>>& model, Var<S> patch_tokens, Var<S> posenc, int heads) {
  Var<S> seq = embed(model.encoder, patch_tokens, posenc);
  return head_forward(model.head, encoder_forward(model.encoder.blocks, seq, heads));
}

}  // namespace smae::sit
