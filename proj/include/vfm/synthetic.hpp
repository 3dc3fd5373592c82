#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vfm/adaptation.hpp"
#include "vfm/data.hpp"
#include "vfm/metrics.hpp"
#include "vfm/nn.hpp"
#include "vfm/pretrain.hpp"

namespace vfm {

struct GeneratorConfig {
  int image_size = 32;
  int latent_dim = 16;
  int hidden = 128;
  int steps = 500;
  int batch_size = 16;
  double lr = 1e-3;
  double kl_weight = 1e-3;
  bool class_conditional = true;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json generator_config_to_json(const GeneratorConfig& c);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

// Class-conditional variational autoencoder over flattened images:
//   enc: [x, onehot] -> hidden (GELU) -> (mu, logvar)
//   dec: [z, onehot] -> hidden (GELU) -> sigmoid pixels
// Loss per image: mean squared pixel error + kl_weight * KL / n_pixels.
class GeneratorState {
 public:
  GeneratorState() = default;
  GeneratorState(const GeneratorConfig& cfg, int channels, std::vector<std::string> class_names,
                 Modality modality);

  const GeneratorConfig& config() const { return cfg_; }
  int channels() const { return channels_; }
  int n_classes() const { return static_cast<int>(class_names.size()); }
  std::size_t n_pixels() const;

  // One training step on a batch; returns the mean loss.
  double train_step(nn::Adam& opt, const std::vector<const Image*>& batch,
                    const std::vector<int>& classes, Rng& rng);
  // Loss of one image with fixed reparameterisation noise; the second form
  // also accumulates parameter gradients.
  double loss(const Image& image, int cls, const std::vector<double>& eps) const;
  double loss_and_grad(const Image& image, int cls, const std::vector<double>& eps);
  Image decode(const std::vector<double>& z, int cls) const;
  Image sample(int cls, Rng& rng) const;

  nn::ParamRefs params();
  nn::ConstParamRefs params() const;
  std::string digest() const;
  void save(const std::filesystem::path& path) const;
  static GeneratorState load(const std::filesystem::path& path);

  nn::Linear enc_hidden, enc_mu, enc_logvar, dec_hidden, dec_out;
  std::vector<std::string> class_names;
  Modality modality = Modality::FUNDUS;
  std::vector<double> loss_history;

 private:
  std::vector<double> input_row(const Image& img, int cls) const;
  std::vector<double> latent_row(std::span<const double> z, int cls) const;

  GeneratorConfig cfg_;
  int channels_ = 1;
};

// Needs >= 32 images of one modality; images are resized to cfg.image_size.
GeneratorState fit_generator(const Manifest& manifest, const GeneratorConfig& cfg);
GeneratorState fit_generator_images(const std::vector<Image>& images, const std::vector<int>& labels,
                                    std::vector<std::string> class_names, Modality modality,
                                    const GeneratorConfig& cfg);

// Writes n PNGs under out_dir and returns their manifest (also written as
// out_dir/manifest.jsonl). Records are tagged synthetic; labels cycle over
// the classes unless `cls` fixes the conditioning class.
Manifest sample_synthetic(const GeneratorState& state, int n, std::uint64_t seed,
                          const std::filesystem::path& out_dir,
                          std::optional<int> cls = std::nullopt);

struct MixPlan {
  int real_count = 0;
  int real_part = 1;
  int synth_part = 0;
  std::uint64_t seed = 0;

  // Real count is the full real set, or 0 for the synthetic-only endpoint.
  int n_real() const;
  // floor(real_count * synth_part / real_part); real_count when real_part == 0.
  int synth_count() const;
  std::string ratio_label() const;
  void validate() const;
};

// Seeded sampling without replacement from both sources. The result's
// root_dir is the deepest common ancestor of the two roots and image paths
// are rewritten relative to it.
Manifest mix_datasets(const Manifest& real, const Manifest& synth, const MixPlan& plan);

struct SweepConfig {
  std::vector<std::pair<int, int>> ratios{{1, 0}, {1, 1}, {1, 3}, {1, 5}, {1, 7}, {0, 1}};
  std::vector<std::uint64_t> seeds{0, 1};
  ToyDataSpec real_data;        // pretraining corpus
  ToyDataSpec downstream_data;  // labelled probe task
  EncoderConfig encoder;
  SelfDistillConfig pretrain;
  GeneratorConfig generator;
  ProbeConfig probe;
  FeaturePooling pooling = FeaturePooling::MEAN_PATCH;

  SweepConfig();
  void validate() const;
};

nlohmann::json sweep_config_to_json(const SweepConfig& c);
// Unknown keys raise ConfigError naming the offending path.
SweepConfig sweep_config_from_json(const nlohmann::json& j);

struct SweepRow {
  int real_part = 1;
  int synth_part = 0;
  int n_real = 0;
  int n_synth = 0;
  double metric_mean = 0.0;
  double metric_std = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> per_seed;

  std::string ratio_label() const;
};

struct SweepResult {
  std::string metric = "probe_auc";
  std::vector<SweepRow> rows;
  std::string config_digest;

  nlohmann::json to_json() const;
  static SweepResult from_json(const nlohmann::json& j);
  std::string to_csv() const;
  // Row with the highest metric_mean (first on ties).
  const SweepRow& best() const;
};

void validate_sweep_json(const nlohmann::json& j);

// One sweep cell: pretrain on `train` with the given seed, then probe the
// teacher encoder's features on the downstream task (mean AUC over episodes).
double pretrain_and_probe(const SweepConfig& cfg, const Manifest& train, const Manifest& downstream,
                          std::uint64_t seed);

struct SweepOptions {
  int jobs = 1;
  // Stop after this many newly computed cells (0 = no limit); used to
  // exercise resumption.
  int max_new_cells = 0;
};

struct SweepRun {
  SweepResult result;
  int cells_computed = 0;
  int cells_reused = 0;
  bool complete = false;
};

// Generates data, fits the generator, then for each ratio x seed mixes,
// pretrains and probes. Each finished cell is persisted to
// out_dir/cells/<ratio>_seed<k>.json and reused on later calls. Writes
// sweep.json and sweep.csv once all cells exist.
SweepRun run_ratio_sweep(const SweepConfig& cfg, const std::filesystem::path& out_dir,
                         const SweepOptions& opt = {});

// CSV with header rater_id,image_id,is_synthetic,judged_synthetic; booleans
// as 0/1 or true/false.
std::vector<TuringResponse> read_turing_csv(const std::filesystem::path& path);

}  // namespace vfm
