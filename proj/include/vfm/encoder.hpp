#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vfm/checkpoint.hpp"
#include "vfm/data.hpp"
#include "vfm/image.hpp"
#include "vfm/nn.hpp"

namespace vfm {

struct EncoderConfig {
  int patch_size = 16;
  int embed_dim = 192;
  int depth = 6;
  int n_heads = 6;
  int image_size = 128;
  int in_channels = 1;
  int mlp_ratio = 4;
  // Ablation switch: when false the positional table is not added.
  bool use_pos_embed = true;

  void validate() const;
  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int head_dim() const { return embed_dim / n_heads; }
  int patch_dim() const { return patch_size * patch_size * in_channels; }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

nlohmann::json encoder_config_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

// Raster-order patch tokens: one row per patch, features ordered (py, px, c).
Tensor patchify(const Image& image, int patch_size);

struct EmbeddingSet {
  std::vector<double> cls;
  Tensor patches;  // [N x D]
};

struct BlockCache {
  Tensor x_in;
  nn::LayerNormCache ln1;
  Tensor h1;
  Tensor qkv;
  Tensor attn;  // [heads x T x T]
  Tensor context;
  Tensor x_mid;
  nn::LayerNormCache ln2;
  Tensor h2;
  Tensor fc1_out;
  Tensor act;
};

// Pre-norm transformer block: x + MHSA(LN(x)), then x + MLP(LN(x)).
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const std::string& name, int dim, int heads, int mlp_ratio, Rng& rng);

  Tensor forward(const Tensor& x, BlockCache* cache) const;
  Tensor backward(const BlockCache& cache, const Tensor& dout);
  // Attention probabilities [heads x T x T] for input x.
  Tensor attention(const Tensor& x) const;

  void collect(nn::ParamRefs& out);
  void collect(nn::ConstParamRefs& out) const;

  nn::LayerNorm ln1;
  nn::Linear qkv;
  nn::Linear proj;
  nn::LayerNorm ln2;
  nn::Linear fc1;
  nn::Linear fc2;
  int n_heads = 1;
};

struct EncoderCache {
  Tensor tokens;
  std::vector<BlockCache> blocks;
  nn::LayerNormCache norm;
};

// Vision transformer; one instance per modality, all sharing the architecture.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, Modality modality, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  Modality modality() const { return modality_; }
  long long train_step() const { return train_step_; }
  void set_train_step(long long s) { train_step_ = s; }

  // Full token output [(N+1) x D] after the final norm; row 0 is cls.
  Tensor forward(const Tensor& tokens, EncoderCache* cache = nullptr) const;
  // Accumulates parameter grads from dL/d(output).
  void backward(const EncoderCache& cache, const Tensor& dout);

  EmbeddingSet encode(const Image& image) const;
  // Checks the record's modality unless the caller opts into cross-modality use.
  EmbeddingSet encode(const Image& image, Modality record_modality,
                      bool allow_cross_modality = false) const;
  // Attention probabilities [heads x (N+1) x (N+1)] of block `layer`.
  Tensor attention_maps(const Image& image, int layer) const;

  nn::ParamRefs params();
  nn::ConstParamRefs params() const;
  std::string digest() const;
  bool all_finite() const;

  Checkpoint to_checkpoint() const;
  static Encoder from_checkpoint(const Checkpoint& ckpt);
  void save(const std::filesystem::path& path) const { save_checkpoint(path, to_checkpoint()); }
  static Encoder load(const std::filesystem::path& path) {
    return from_checkpoint(load_checkpoint(path));
  }

  nn::Linear patch_embed;
  nn::Param cls_token;
  nn::Param pos_embed;
  std::vector<TransformerBlock> blocks;
  nn::LayerNorm norm;

 private:
  void check_image(const Image& image) const;

  EncoderConfig cfg_;
  Modality modality_ = Modality::FUNDUS;
  long long train_step_ = 0;
};

// Converts a batch-independent embedding of one image into the [(N+1) x D]
// layout expected by Encoder::backward.
Tensor join_token_grads(const std::vector<double>& dcls, const Tensor& dpatches);

}  // namespace vfm
