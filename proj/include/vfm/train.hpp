#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "vfm/decoders.hpp"
#include "vfm/encoder.hpp"

namespace vfm {

struct TrainOptions {
  int steps = 300;
  int batch_size = 8;
  double lr = 1e-3;
  double weight_decay = 0.0;
  // When set, encoder weights are updated jointly with the head.
  bool finetune_encoder = false;
  double encoder_lr = 1e-4;
  // Cosine schedule from lr down to zero over `steps`.
  bool cosine_decay = false;
  std::uint64_t seed = 0;
};

// Loss of one sample given the full encoder output [(N+1) x D]. Head grads
// are accumulated scaled by `weight`; if dtokens is non-null it receives
// weight * dL/d(tokens).
using SampleLoss =
    std::function<double(std::size_t index, const Tensor& tokens, double weight, Tensor* dtokens)>;

struct TrainResult {
  std::vector<double> loss_history;  // mean batch loss per step
};

// Encoder outputs for a list of images (one forward each).
std::vector<Tensor> encode_all(const Encoder& encoder, const std::vector<Image>& images);
EmbeddingSet split_tokens(const Tensor& tokens);

// Minibatch training of head parameters on cached encoder outputs.
TrainResult train_on_features(const std::vector<Tensor>& tokens, const nn::ParamRefs& head_params,
                              const SampleLoss& loss, const TrainOptions& opt);

// End-to-end training; the encoder is updated when opt.finetune_encoder is set,
// otherwise this falls back to train_on_features.
TrainResult train_head(Encoder& encoder, const std::vector<Image>& images,
                       const nn::ParamRefs& head_params, const SampleLoss& loss,
                       const TrainOptions& opt);

// Several per-modality encoders feeding one head; sample i is encoded by
// encoders[owner[i]]. Every encoder is finetuned when opt.finetune_encoder is set.
TrainResult train_head_multi(const std::vector<Encoder*>& encoders,
                             const std::vector<std::size_t>& owner,
                             const std::vector<Image>& images, const nn::ParamRefs& head_params,
                             const SampleLoss& loss, const TrainOptions& opt);

SampleLoss classifier_objective(ClassifierHead& head, const std::vector<int>& labels);
SampleLoss segmenter_objective(SegmenterHead& head, const std::vector<Mask>& masks,
                               double dice_weight = 1.0);
SampleLoss landmark_objective(LandmarkHead& head, const std::vector<LandmarkSet>& targets);
// Targets are standardized panels (see RegressorHead::standardize).
SampleLoss regressor_objective(RegressorHead& head, const std::vector<std::vector<double>>& targets);
SampleLoss forecast_objective(ForecastHead& head, const std::vector<double>& delta_days,
                              const std::vector<int>& outcomes);

}  // namespace vfm
