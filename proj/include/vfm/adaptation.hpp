#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vfm/data.hpp"
#include "vfm/encoder.hpp"

namespace vfm {

enum class FeaturePooling { CLS, MEAN_PATCH };

struct FeatureTable {
  Tensor features;                // [n x embed_dim], manifest order
  std::vector<int> labels;        // class_index, or -1 when unlabelled
  std::vector<std::string> ids;
  std::string encoder_digest;
  std::string manifest_digest;
  bool from_cache = false;
};

// Encodes every record with the frozen encoder. With cache_dir set, the
// table is stored under a name derived from (encoder digest, manifest
// digest, pooling) and served from there on later calls.
FeatureTable extract_features(const Encoder& encoder, const Manifest& manifest,
                              const std::optional<std::filesystem::path>& cache_dir = std::nullopt,
                              FeaturePooling pooling = FeaturePooling::CLS,
                              bool allow_cross_modality = false);
std::filesystem::path feature_cache_path(const std::filesystem::path& cache_dir,
                                         const std::string& encoder_digest,
                                         const std::string& manifest_digest,
                                         FeaturePooling pooling);

struct ProbeConfig {
  std::string task = "CLASSIFY";
  std::optional<int> k_shot;  // empty -> full training portion
  int episodes = 5;
  double lr = 0.05;
  int steps = 500;
  double weight_decay = 1e-4;
  // Held-out share per episode when k_shot is empty (stratified).
  double test_fraction = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json probe_config_to_json(const ProbeConfig& c);
ProbeConfig probe_config_from_json(const nlohmann::json& j);

// Softmax regression on standardized features.
struct LinearProbe {
  Tensor weight;  // [C x D]
  std::vector<double> bias;
  std::vector<double> feat_mean;
  std::vector<double> feat_std;

  Tensor predict_proba(const Tensor& features) const;
};

// Full-batch Adam on mean cross-entropy; labels must lie in [0, n_classes).
LinearProbe fit_linear_probe(const Tensor& features, const std::vector<int>& labels,
                             int n_classes, const ProbeConfig& cfg);

// Binary: AUC of the positive class. Multiclass: macro one-vs-rest AUC.
double probe_auc(const Tensor& probs, const std::vector<int>& labels);

struct EpisodeResult {
  int episode = 0;
  double auc = 0.0;
  double accuracy = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

struct ProbeResult {
  std::vector<EpisodeResult> episodes;
  double auc_mean = 0.0;
  double auc_std = 0.0;
  double accuracy_mean = 0.0;
  std::optional<int> k_shot;
  std::string encoder_digest_before;
  std::string encoder_digest_after;

  nlohmann::json to_json() const;
};

// Episodes with RNG streams keyed by (seed, episode). Rows with label -1 are
// ignored. Throws SingleClassTrainSet when a training portion holds fewer
// than two classes.
ProbeResult linear_probe(const Tensor& features, const std::vector<int>& labels,
                         const ProbeConfig& cfg);

// Extract (frozen) -> probe, recording the encoder digest on both sides.
ProbeResult probe_encoder(const Encoder& encoder, const Manifest& manifest, const ProbeConfig& cfg,
                          const std::optional<std::filesystem::path>& cache_dir = std::nullopt,
                          FeaturePooling pooling = FeaturePooling::CLS);

struct EpisodeSplit {
  std::vector<std::size_t> support;
  std::vector<std::size_t> query;
};

// k per class without replacement; every other labelled row goes to query.
EpisodeSplit few_shot_split(const std::vector<int>& labels, int k, std::uint64_t seed);

struct FewShotEpisode {
  Manifest support;
  Manifest query;
};

FewShotEpisode few_shot_episode(const Manifest& manifest, int k, std::uint64_t seed);

}  // namespace vfm
