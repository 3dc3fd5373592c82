#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vfm/checkpoint.hpp"
#include "vfm/data.hpp"
#include "vfm/encoder.hpp"
#include "vfm/nn.hpp"

namespace vfm {

enum class HeadType { CLASSIFIER, SEGMENTER, LANDMARK, REGRESSOR, FORECASTER };

std::string_view head_type_name(HeadType t);
std::optional<HeadType> parse_head_type(std::string_view name);

// One or two dense layers with a GELU in between (hidden == 0 -> single layer).
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, int in, int hidden, int out, Rng& rng);

  struct Cache {
    Tensor input, pre, act;
  };
  Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
  Tensor backward(const Cache& cache, const Tensor& dy);
  void collect(nn::ParamRefs& out);
  void collect(nn::ConstParamRefs& out) const;
  int in_dim() const { return static_cast<int>(first.in_dim()); }
  int out_dim() const { return static_cast<int>(hidden_layer ? second.out_dim() : first.out_dim()); }
  int hidden() const { return hidden_layer ? static_cast<int>(first.out_dim()) : 0; }

  nn::Linear first;
  nn::Linear second;
  bool hidden_layer = false;
};

// Metadata-blind disease classifier. One parameter set serves every modality.
class ClassifierHead {
 public:
  static constexpr bool kSharedAcrossModalities = true;

  ClassifierHead() = default;
  ClassifierHead(int embed_dim, std::vector<std::string> label_space, int hidden,
                 std::uint64_t seed);

  int num_classes() const { return static_cast<int>(label_space.size()); }
  Tensor logits(const Tensor& cls, Mlp::Cache* cache = nullptr) const;
  std::vector<double> classify(const EmbeddingSet& emb) const;
  Tensor backward(const Mlp::Cache& cache, const Tensor& dlogits) { return mlp.backward(cache, dlogits); }

  nn::ParamRefs params();
  nn::ConstParamRefs params() const;
  std::string digest() const { return nn::params_digest(params()); }
  Checkpoint to_checkpoint() const;
  static ClassifierHead from_checkpoint(const Checkpoint& ckpt);

  Mlp mlp;
  std::vector<std::string> label_space;
};

// Per-token MLP whose outputs are unshuffled into patch_size x patch_size
// pixel blocks: patch grid [G*G x D] -> per-pixel scores [H*W x C].
class SegmenterHead {
 public:
  SegmenterHead() = default;
  SegmenterHead(int embed_dim, int patch_size, int grid, int num_classes, int hidden,
                std::uint64_t seed);

  int num_classes() const { return num_classes_; }
  int image_size() const { return patch_size_ * grid_; }
  int patch_size() const { return patch_size_; }
  int grid() const { return grid_; }

  // Per-pixel logits [H*W x C], rows in raster order.
  Tensor logits(const Tensor& patches, Mlp::Cache* cache = nullptr) const;
  // Backward from per-pixel logit gradients to patch-token gradients.
  Tensor backward(const Mlp::Cache& cache, const Tensor& dlogits);
  // Per-pixel probabilities [H x W x C].
  Tensor segment(const EmbeddingSet& emb, int out_size) const;

  nn::ParamRefs params();
  nn::ConstParamRefs params() const;
  Checkpoint to_checkpoint() const;
  static SegmenterHead from_checkpoint(const Checkpoint& ckpt);

  Mlp mlp;

 private:
  Tensor shuffle(const Tensor& token_out) const;
  Tensor unshuffle(const Tensor& pixel_grad) const;

  int patch_size_ = 16;
  int grid_ = 8;
  int num_classes_ = 2;
};

// Argmax mask from [H x W x C] probabilities.
Mask argmax_mask(const Tensor& probs);

struct SegLoss {
  double loss = 0.0;
  Tensor dlogits;
};
// Mean pixel cross-entropy plus dice_weight * (1 - mean soft Dice over foreground classes).
SegLoss segmentation_loss(const Tensor& logits, const Mask& truth, double dice_weight);

// Expectation of pixel coordinates under softmax(heatmap) on an H x W grid.
Point2 soft_argmax(std::span<const double> heatmap, int height, int width);

class LandmarkHead {
 public:
  static constexpr int kNumLandmarks = 3;

  LandmarkHead() = default;
  LandmarkHead(int embed_dim, int patch_size, int grid, int hidden, std::uint64_t seed);

  int image_size() const { return seg_.image_size(); }
  // Heatmap logits [3 x H*W].
  Tensor heatmaps(const Tensor& patches, Mlp::Cache* cache = nullptr) const;
  Tensor backward(const Mlp::Cache& cache, const Tensor& dheatmaps);
  LandmarkSet detect_landmarks(const EmbeddingSet& emb, int image_size) const;

  nn::ParamRefs params() { return seg_.params(); }
  nn::ConstParamRefs params() const { return seg_.params(); }
  Checkpoint to_checkpoint() const;
  static LandmarkHead from_checkpoint(const Checkpoint& ckpt);

 private:
  SegmenterHead seg_;
};

struct LandmarkLoss {
  double loss = 0.0;
  Tensor dheatmaps;
  LandmarkSet predicted;
};
// Mean squared Euclidean error of the soft-argmax points, in units of
// (image_size / 8)^2 so the loss is O(1) at init.
LandmarkLoss landmark_loss(const Tensor& heatmaps, int height, int width, const LandmarkSet& truth);

class RegressorHead {
 public:
  RegressorHead() = default;
  RegressorHead(int embed_dim, const PanelSpec& panel, int hidden, std::uint64_t seed);

  std::size_t panel_size() const { return names.size(); }
  Tensor forward(const Tensor& cls, Mlp::Cache* cache = nullptr) const;
  Tensor backward(const Mlp::Cache& cache, const Tensor& dy) { return mlp.backward(cache, dy); }
  // Estimates per-biomarker mean/std from training targets.
  void fit_standardization(const std::vector<BiomarkerPanel>& panels);
  std::vector<double> standardize(const BiomarkerPanel& panel) const;
  BiomarkerPanel destandardize(std::span<const double> z) const;
  BiomarkerPanel regress_biomarkers(const EmbeddingSet& emb) const;

  nn::ParamRefs params();
  nn::ConstParamRefs params() const;
  Checkpoint to_checkpoint() const;
  static RegressorHead from_checkpoint(const Checkpoint& ckpt);

  Mlp mlp;
  std::string panel_spec_id;
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> stddev;
};

class ForecastHead {
 public:
  static constexpr double kIntervalScaleDays = 1000.0;

  ForecastHead() = default;
  ForecastHead(int embed_dim, std::uint64_t seed);

  // Logit for a batch of [cls, delta_days / 1000] rows.
  Tensor logits(const Tensor& inputs) const { return linear.forward(inputs); }
  static Tensor make_input(std::span<const double> cls, double delta_days);
  double forecast(const EmbeddingSet& emb, double delta_days) const;

  nn::ParamRefs params();
  nn::ConstParamRefs params() const;
  Checkpoint to_checkpoint() const;
  static ForecastHead from_checkpoint(const Checkpoint& ckpt);

  nn::Linear linear;
};

double sigmoid(double z);

}  // namespace vfm
