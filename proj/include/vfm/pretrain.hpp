#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "vfm/data.hpp"
#include "vfm/encoder.hpp"

namespace vfm {

struct SelfDistillConfig {
  int n_global_crops = 2;
  int n_local_crops = 4;
  double global_crop_frac = 0.75;
  double local_crop_frac = 0.35;
  int proj_dim = 256;
  int proj_hidden = 0;  // 0 -> 2 * embed_dim
  // Batch normalisation after the first projection layer, using the
  // statistics of the crops in the current step.
  bool head_batchnorm = true;
  double student_temp = 0.1;
  double teacher_temp = 0.04;
  double ema_momentum = 0.996;
  double center_momentum = 0.9;
  bool centering = true;
  int steps = 100;
  int batch_size = 8;
  double lr = 5e-4;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints

  void validate() const;
};

nlohmann::json self_distill_config_to_json(const SelfDistillConfig& c);
SelfDistillConfig self_distill_config_from_json(const nlohmann::json& j);

struct CropBox {
  double y0 = 0, x0 = 0, side = 0;
};

struct MultiCrop {
  std::vector<Image> global;
  std::vector<Image> local;
  std::vector<CropBox> global_boxes;
  std::vector<CropBox> local_boxes;
};

// Square crops sized as a fraction of the shorter image side, resized to out_size.
MultiCrop multi_crop(const Image& image, const SelfDistillConfig& cfg, Rng& rng, int out_size);

// Linear -> [BatchNorm] -> GELU -> Linear on cls embeddings, one row per view.
// With batch norm, each forward normalises over the rows it is given, so it
// needs at least two rows.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(int in_dim, int hidden, int out_dim, bool batchnorm, Rng& rng);

  struct Cache {
    Tensor input, pre, normed, act;
    std::vector<double> rstd;
  };
  Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
  Tensor backward(const Cache& cache, const Tensor& dy);
  nn::ParamRefs params();
  nn::ConstParamRefs params() const;
  bool batchnorm() const { return batchnorm_; }

  nn::Linear fc1;
  nn::Param bn_gamma;
  nn::Param bn_beta;
  nn::Linear fc2;
  double bn_eps = 1e-5;

 private:
  bool batchnorm_ = false;
};

struct DistillLoss {
  double loss = 0.0;
  Tensor dstudent;  // dL/d(student_logits)
};

// Mean over rows of H(softmax((t - c) / tau_t), softmax(s / tau_s)). The
// teacher branch is treated as a constant.
double distillation_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                         std::span<const double> center, double student_temp, double teacher_temp);
DistillLoss distillation_loss_with_grad(const Tensor& student_logits, const Tensor& teacher_logits,
                                        std::span<const double> center, double student_temp,
                                        double teacher_temp);
// Entropy of the centred, sharpened teacher distribution, averaged over rows.
double teacher_entropy(const Tensor& teacher_logits, std::span<const double> center,
                       double teacher_temp);

// t' = m t + (1 - m) s, elementwise.
void ema_update(Tensor& teacher, const Tensor& student, double momentum);
void ema_update(const nn::ParamRefs& teacher, const nn::ConstParamRefs& student, double momentum);
// c' = m_c c + (1 - m_c) mean
void center_update(std::vector<double>& center, std::span<const double> batch_mean,
                   double momentum);

struct PretrainState {
  Encoder student;
  ProjectionHead student_head;
  Encoder teacher;
  ProjectionHead teacher_head;
  std::vector<double> center;
  long long step = 0;
  std::vector<double> loss_history;
};

PretrainState init_pretrain_state(const EncoderConfig& enc_cfg, Modality modality,
                                  const SelfDistillConfig& cfg);

// One optimisation step over a batch of images; returns the batch loss.
double pretrain_step(PretrainState& state, nn::Adam& optimizer,
                     const std::vector<const Image*>& batch,
                     const std::vector<std::string>& batch_keys, const SelfDistillConfig& cfg);

struct PretrainResult {
  PretrainState state;
  std::vector<long long> checkpoint_steps;
  std::vector<std::filesystem::path> checkpoint_paths;
  std::optional<std::filesystem::path> final_checkpoint;
};

// Runs the full loop over a single-modality manifest. With out_dir set,
// writes loss_history.csv, periodic checkpoints (teacher encoder) and a
// final checkpoint.
PretrainResult pretrain(const Manifest& manifest, const EncoderConfig& enc_cfg,
                        const SelfDistillConfig& cfg,
                        const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Same loop on in-memory images.
PretrainResult pretrain_images(const std::vector<Image>& images,
                               const std::vector<std::string>& keys, Modality modality,
                               const EncoderConfig& enc_cfg, const SelfDistillConfig& cfg,
                               const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Mean over output dimensions of the across-batch std of the student's
// output distribution softmax(logits / tau_s).
double projection_std(const PretrainState& state, const std::vector<Image>& probe,
                      const SelfDistillConfig& cfg);

// Brings an image to the encoder's channel count and size (bilinear resize).
Image conform_image(const Image& image, const EncoderConfig& cfg);

}  // namespace vfm
