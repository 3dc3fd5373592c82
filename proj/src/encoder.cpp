#include "vfm/encoder.hpp"

#include <cmath>
#include <set>

#include "vfm/digest.hpp"
#include "vfm/error.hpp"
#include "vfm/kernels.hpp"

namespace vfm {

using nlohmann::json;

void EncoderConfig::validate() const {
  auto bad = [](const std::string& why) { throw Error(Errc::ConfigError, "encoder: " + why); };
  if (patch_size < 1 || embed_dim < 1 || depth < 1 || n_heads < 1 || image_size < 1 ||
      in_channels < 1 || mlp_ratio < 1) {
    bad("all sizes must be positive");
  }
  if (image_size % patch_size != 0) bad("image_size must be divisible by patch_size");
  if (embed_dim % n_heads != 0) bad("embed_dim must be divisible by n_heads");
}

json encoder_config_to_json(const EncoderConfig& c) {
  return {{"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},   {"depth", c.depth},
          {"n_heads", c.n_heads},       {"image_size", c.image_size}, {"in_channels", c.in_channels},
          {"mlp_ratio", c.mlp_ratio},   {"use_pos_embed", c.use_pos_embed}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  static const std::set<std::string> kKnown = {"patch_size", "embed_dim",   "depth",
                                               "n_heads",    "image_size",  "in_channels",
                                               "mlp_ratio",  "use_pos_embed"};
  for (const auto& item : j.items()) {
    if (!kKnown.count(item.key())) {
      throw Error(Errc::ConfigError, "encoder: unknown key '" + item.key() + "'");
    }
  }
  EncoderConfig c;
  try {
    c.patch_size = j.value("patch_size", c.patch_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.depth = j.value("depth", c.depth);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.image_size = j.value("image_size", c.image_size);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.use_pos_embed = j.value("use_pos_embed", c.use_pos_embed);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("encoder: ") + e.what());
  }
  c.validate();
  return c;
}

Tensor patchify(const Image& image, int p) {
  if (p < 1 || image.height % p != 0 || image.width % p != 0) {
    throw Error(Errc::IndivisibleImage, std::to_string(image.height) + "x" +
                                            std::to_string(image.width) + " by patch " +
                                            std::to_string(p));
  }
  const int gh = image.height / p, gw = image.width / p, c = image.channels;
  Tensor tokens(static_cast<std::size_t>(gh * gw), static_cast<std::size_t>(p * p * c));
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      auto row = tokens.row(static_cast<std::size_t>(gy * gw + gx));
      std::size_t k = 0;
      for (int py = 0; py < p; ++py) {
        for (int px = 0; px < p; ++px) {
          for (int ch = 0; ch < c; ++ch) row[k++] = image.at(gy * p + py, gx * p + px, ch);
        }
      }
    }
  }
  return tokens;
}

namespace {

void copy_head(const Tensor& src, std::size_t col0, std::size_t width, Tensor& dst) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    for (std::size_t c = 0; c < width; ++c) dst(r, c) = src(r, col0 + c);
  }
}

void add_head(const Tensor& src, Tensor& dst, std::size_t col0) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    for (std::size_t c = 0; c < src.cols(); ++c) dst(r, col0 + c) += src(r, c);
  }
}

}  // namespace

TransformerBlock::TransformerBlock(const std::string& name, int dim, int heads, int mlp_ratio,
                                   Rng& rng)
    : ln1(name + ".ln1", dim),
      qkv(name + ".attn.qkv", dim, 3 * dim, rng),
      proj(name + ".attn.proj", dim, dim, rng, 0.5),
      ln2(name + ".ln2", dim),
      fc1(name + ".mlp.fc1", dim, dim * mlp_ratio, rng),
      fc2(name + ".mlp.fc2", dim * mlp_ratio, dim, rng, 0.5),
      n_heads(heads) {}

Tensor TransformerBlock::forward(const Tensor& x, BlockCache* cache) const {
  BlockCache local;
  BlockCache& c = cache ? *cache : local;
  const std::size_t T = x.rows(), D = x.cols();
  const std::size_t H = static_cast<std::size_t>(n_heads), dh = D / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  c.x_in = x;
  c.h1 = ln1.forward(x, &c.ln1);
  c.qkv = qkv.forward(c.h1);
  c.attn = Tensor(std::vector<std::size_t>{H, T, T});
  c.context = Tensor(T, D);
  Tensor q(T, dh), k(T, dh), v(T, dh), scores(T, T), ctx(T, dh);
  for (std::size_t h = 0; h < H; ++h) {
    copy_head(c.qkv, h * dh, dh, q);
    copy_head(c.qkv, D + h * dh, dh, k);
    copy_head(c.qkv, 2 * D + h * dh, dh, v);
    kernels::matmul_nt(q.values(), k.values(), scores.values(), T, dh, T);
    std::span<double> probs(c.attn.data() + h * T * T, T * T);
    kernels::softmax_rows(scores.values(), probs, T, T, scale);
    kernels::matmul(probs, v.values(), ctx.values(), T, T, dh);
    for (std::size_t r = 0; r < T; ++r) {
      for (std::size_t j = 0; j < dh; ++j) c.context(r, h * dh + j) = ctx(r, j);
    }
  }
  c.x_mid = proj.forward(c.context);
  c.x_mid += x;
  c.h2 = ln2.forward(c.x_mid, &c.ln2);
  c.fc1_out = fc1.forward(c.h2);
  c.act = nn::gelu(c.fc1_out);
  Tensor out = fc2.forward(c.act);
  out += c.x_mid;
  return out;
}

Tensor TransformerBlock::attention(const Tensor& x) const {
  BlockCache c;
  forward(x, &c);
  return std::move(c.attn);
}

Tensor TransformerBlock::backward(const BlockCache& c, const Tensor& dout) {
  const std::size_t T = c.x_in.rows(), D = c.x_in.cols();
  const std::size_t H = static_cast<std::size_t>(n_heads), dh = D / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor dact = fc2.backward(c.act, dout);
  Tensor dfc1 = nn::gelu_backward(c.fc1_out, dact);
  Tensor dh2 = fc1.backward(c.h2, dfc1);
  Tensor dx_mid = ln2.backward(c.ln2, dh2);
  dx_mid += dout;

  Tensor dcontext = proj.backward(c.context, dx_mid);
  Tensor dqkv(T, 3 * D);
  Tensor q(T, dh), k(T, dh), v(T, dh), dctx(T, dh), dprobs(T, T), dscores(T, T);
  Tensor dq(T, dh), dk(T, dh), dv(T, dh);
  for (std::size_t h = 0; h < H; ++h) {
    copy_head(c.qkv, h * dh, dh, q);
    copy_head(c.qkv, D + h * dh, dh, k);
    copy_head(c.qkv, 2 * D + h * dh, dh, v);
    copy_head(dcontext, h * dh, dh, dctx);
    std::span<const double> probs(c.attn.data() + h * T * T, T * T);
    kernels::matmul_nt(dctx.values(), v.values(), dprobs.values(), T, dh, T);
    kernels::matmul_tn(probs, dctx.values(), dv.values(), T, T, dh);
    kernels::softmax_rows_backward(probs, dprobs.values(), dscores.values(), T, T, scale);
    kernels::matmul(dscores.values(), k.values(), dq.values(), T, T, dh);
    kernels::matmul_tn(dscores.values(), q.values(), dk.values(), T, T, dh);
    add_head(dq, dqkv, h * dh);
    add_head(dk, dqkv, D + h * dh);
    add_head(dv, dqkv, 2 * D + h * dh);
  }
  Tensor dh1 = qkv.backward(c.h1, dqkv);
  Tensor dx = ln1.backward(c.ln1, dh1);
  dx += dx_mid;
  return dx;
}

void TransformerBlock::collect(nn::ParamRefs& out) {
  ln1.collect(out);
  qkv.collect(out);
  proj.collect(out);
  ln2.collect(out);
  fc1.collect(out);
  fc2.collect(out);
}

void TransformerBlock::collect(nn::ConstParamRefs& out) const {
  ln1.collect(out);
  qkv.collect(out);
  proj.collect(out);
  ln2.collect(out);
  fc1.collect(out);
  fc2.collect(out);
}

Encoder::Encoder(const EncoderConfig& cfg, Modality modality, std::uint64_t seed)
    : cfg_(cfg), modality_(modality) {
  cfg_.validate();
  Rng rng(seed);
  const auto D = static_cast<std::size_t>(cfg_.embed_dim);
  const auto T = static_cast<std::size_t>(cfg_.num_patches() + 1);
  patch_embed = nn::Linear("patch_embed", static_cast<std::size_t>(cfg_.patch_dim()), D, rng);
  cls_token = nn::Param("cls_token", Tensor(1, D));
  pos_embed = nn::Param("pos_embed", Tensor(T, D));
  // Same scale as embedded patches so the cls row is not degenerate under LayerNorm.
  for (double& v : cls_token.value.values()) v = rng.normal(0.0, 0.5);
  for (double& v : pos_embed.value.values()) v = rng.normal(0.0, 0.1);
  for (int i = 0; i < cfg_.depth; ++i) {
    blocks.emplace_back("blocks." + std::to_string(i), cfg_.embed_dim, cfg_.n_heads,
                        cfg_.mlp_ratio, rng);
  }
  norm = nn::LayerNorm("norm", D);
}

Tensor Encoder::forward(const Tensor& tokens, EncoderCache* cache) const {
  const auto N = static_cast<std::size_t>(cfg_.num_patches());
  const auto D = static_cast<std::size_t>(cfg_.embed_dim);
  if (tokens.rows() != N || tokens.cols() != static_cast<std::size_t>(cfg_.patch_dim())) {
    throw Error(Errc::ShapeMismatch, "token grid " + shape_string(tokens.shape()) +
                                         " does not match encoder config");
  }
  Tensor embedded = patch_embed.forward(tokens);
  Tensor x(N + 1, D);
  for (std::size_t d = 0; d < D; ++d) x(0, d) = cls_token.value[d];
  std::copy(embedded.data(), embedded.data() + N * D, x.data() + D);
  if (cfg_.use_pos_embed) x += pos_embed.value;

  if (cache) {
    cache->tokens = tokens;
    cache->blocks.assign(blocks.size(), BlockCache{});
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    x = blocks[i].forward(x, cache ? &cache->blocks[i] : nullptr);
  }
  return norm.forward(x, cache ? &cache->norm : nullptr);
}

void Encoder::backward(const EncoderCache& cache, const Tensor& dout) {
  const auto D = static_cast<std::size_t>(cfg_.embed_dim);
  Tensor dx = norm.backward(cache.norm, dout);
  for (std::size_t i = blocks.size(); i-- > 0;) dx = blocks[i].backward(cache.blocks[i], dx);
  if (cfg_.use_pos_embed) pos_embed.grad += dx;
  for (std::size_t d = 0; d < D; ++d) cls_token.grad[d] += dx(0, d);
  Tensor dpatch(dx.rows() - 1, D);
  std::copy(dx.data() + D, dx.data() + dx.size(), dpatch.data());
  patch_embed.backward_params(cache.tokens, dpatch);
}

void Encoder::check_image(const Image& image) const {
  if (image.height != cfg_.image_size || image.width != cfg_.image_size ||
      image.channels != cfg_.in_channels) {
    throw Error(Errc::ShapeMismatch,
                "image " + std::to_string(image.height) + "x" + std::to_string(image.width) + "x" +
                    std::to_string(image.channels) + " vs encoder " +
                    std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.image_size) + "x" +
                    std::to_string(cfg_.in_channels));
  }
}

EmbeddingSet Encoder::encode(const Image& image) const {
  check_image(image);
  Tensor out = forward(patchify(image, cfg_.patch_size));
  if (!out.all_finite()) throw Error(Errc::NonFiniteActivation, "encoder output");
  const auto D = static_cast<std::size_t>(cfg_.embed_dim);
  EmbeddingSet e;
  e.cls.assign(out.data(), out.data() + D);
  e.patches = Tensor(out.rows() - 1, D);
  std::copy(out.data() + D, out.data() + out.size(), e.patches.data());
  return e;
}

EmbeddingSet Encoder::encode(const Image& image, Modality record_modality,
                             bool allow_cross_modality) const {
  if (record_modality != modality_ && !allow_cross_modality) {
    throw Error(Errc::ModalityMismatch, std::string(modality_name(record_modality)) +
                                            " image given to " +
                                            std::string(modality_name(modality_)) + " encoder");
  }
  return encode(image);
}

Tensor Encoder::attention_maps(const Image& image, int layer) const {
  if (layer < 0 || layer >= cfg_.depth) {
    throw Error(Errc::LayerOutOfRange,
                "layer " + std::to_string(layer) + " of depth " + std::to_string(cfg_.depth));
  }
  check_image(image);
  const Tensor tokens = patchify(image, cfg_.patch_size);
  const auto N = static_cast<std::size_t>(cfg_.num_patches());
  const auto D = static_cast<std::size_t>(cfg_.embed_dim);
  Tensor embedded = patch_embed.forward(tokens);
  Tensor x(N + 1, D);
  for (std::size_t d = 0; d < D; ++d) x(0, d) = cls_token.value[d];
  std::copy(embedded.data(), embedded.data() + N * D, x.data() + D);
  if (cfg_.use_pos_embed) x += pos_embed.value;
  for (int i = 0; i < layer; ++i) x = blocks[static_cast<std::size_t>(i)].forward(x, nullptr);
  return blocks[static_cast<std::size_t>(layer)].attention(x);
}

nn::ParamRefs Encoder::params() {
  nn::ParamRefs out;
  patch_embed.collect(out);
  out.push_back(&cls_token);
  out.push_back(&pos_embed);
  for (auto& b : blocks) b.collect(out);
  norm.collect(out);
  return out;
}

nn::ConstParamRefs Encoder::params() const {
  nn::ConstParamRefs out;
  patch_embed.collect(out);
  out.push_back(&cls_token);
  out.push_back(&pos_embed);
  for (const auto& b : blocks) b.collect(out);
  norm.collect(out);
  return out;
}

std::string Encoder::digest() const { return nn::params_digest(params()); }

bool Encoder::all_finite() const {
  for (const nn::Param* p : params()) {
    if (!p->value.all_finite()) return false;
  }
  return true;
}

Checkpoint Encoder::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "encoder"},
               {"config", encoder_config_to_json(cfg_)},
               {"modality", modality_name(modality_)},
               {"train_step", train_step_}};
  append_params(ckpt, params());
  return ckpt;
}

Encoder Encoder::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", "") != "encoder") {
    throw Error(Errc::CorruptCheckpoint, "not an encoder checkpoint");
  }
  const auto mod_name = ckpt.meta.at("modality").get<std::string>();
  const auto mod = parse_modality(mod_name);
  if (!mod) throw Error(Errc::UnknownModality, mod_name);
  Encoder e(encoder_config_from_json(ckpt.meta.at("config")), *mod, 0);
  restore_params(ckpt, e.params());
  e.train_step_ = ckpt.meta.at("train_step").get<long long>();
  return e;
}

Tensor join_token_grads(const std::vector<double>& dcls, const Tensor& dpatches) {
  const std::size_t D = dcls.size();
  Tensor out(dpatches.rows() + 1, D);
  std::copy(dcls.begin(), dcls.end(), out.data());
  if (!dpatches.empty()) std::copy(dpatches.data(), dpatches.data() + dpatches.size(), out.data() + D);
  return out;
}

}  // namespace vfm
