#include "vfm/decoders.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vfm/error.hpp"

namespace vfm {

using nlohmann::json;

namespace {

constexpr std::string_view kHeadNames[] = {"CLASSIFIER", "SEGMENTER", "LANDMARK", "REGRESSOR",
                                           "FORECASTER"};

void check_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw Error(Errc::DimMismatch, std::string(what) + ": expected width " + std::to_string(want) +
                                       ", got " + std::to_string(got));
  }
}

void check_head_type(const Checkpoint& ckpt, HeadType want) {
  const auto it = ckpt.meta.find("head_type");
  if (it == ckpt.meta.end() || !it->is_string() || *it != head_type_name(want)) {
    throw Error(Errc::CorruptCheckpoint,
                "expected head_type " + std::string(head_type_name(want)));
  }
}

Checkpoint head_checkpoint(HeadType type, json config, const nn::ConstParamRefs& params) {
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "head"},
               {"head_type", head_type_name(type)},
               {"config", std::move(config)},
               {"format_version", kCheckpointFormatVersion}};
  append_params(ckpt, params);
  return ckpt;
}

Tensor row_tensor(std::span<const double> v) {
  Tensor t(1, v.size());
  std::copy(v.begin(), v.end(), t.data());
  return t;
}

}  // namespace

std::string_view head_type_name(HeadType t) { return kHeadNames[static_cast<int>(t)]; }

std::optional<HeadType> parse_head_type(std::string_view name) {
  for (int i = 0; i < 5; ++i) {
    if (kHeadNames[i] == name) return static_cast<HeadType>(i);
  }
  return std::nullopt;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// ---- Mlp ----

Mlp::Mlp(const std::string& name, int in, int hidden, int out, Rng& rng) : hidden_layer(hidden > 0) {
  if (hidden_layer) {
    first = nn::Linear(name + ".fc1", in, hidden, rng);
    second = nn::Linear(name + ".fc2", hidden, out, rng, 0.5);
  } else {
    first = nn::Linear(name + ".fc", in, out, rng, 0.5);
  }
}

Tensor Mlp::forward(const Tensor& x, Cache* cache) const {
  if (!hidden_layer) {
    if (cache) cache->input = x;
    return first.forward(x);
  }
  Tensor pre = first.forward(x);
  Tensor act = nn::gelu(pre);
  Tensor out = second.forward(act);
  if (cache) {
    cache->input = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

Tensor Mlp::backward(const Cache& cache, const Tensor& dy) {
  if (!hidden_layer) return first.backward(cache.input, dy);
  const Tensor dact = second.backward(cache.act, dy);
  return first.backward(cache.input, nn::gelu_backward(cache.pre, dact));
}

void Mlp::collect(nn::ParamRefs& out) {
  first.collect(out);
  if (hidden_layer) second.collect(out);
}

void Mlp::collect(nn::ConstParamRefs& out) const {
  first.collect(out);
  if (hidden_layer) second.collect(out);
}

// ---- ClassifierHead ----

ClassifierHead::ClassifierHead(int embed_dim, std::vector<std::string> labels, int hidden,
                               std::uint64_t seed)
    : label_space(std::move(labels)) {
  if (label_space.size() < 2) throw Error(Errc::ConfigError, "classifier needs >= 2 classes");
  Rng rng = Rng::keyed(seed, "classifier");
  mlp = Mlp("classifier", embed_dim, hidden, num_classes(), rng);
}

Tensor ClassifierHead::logits(const Tensor& cls, Mlp::Cache* cache) const {
  check_dim(cls.cols(), static_cast<std::size_t>(mlp.in_dim()), "classifier");
  return mlp.forward(cls, cache);
}

std::vector<double> ClassifierHead::classify(const EmbeddingSet& emb) const {
  const Tensor p = nn::softmax_rows(logits(row_tensor(emb.cls)));
  return {p.values().begin(), p.values().end()};
}

nn::ParamRefs ClassifierHead::params() {
  nn::ParamRefs out;
  mlp.collect(out);
  return out;
}

nn::ConstParamRefs ClassifierHead::params() const {
  nn::ConstParamRefs out;
  mlp.collect(out);
  return out;
}

Checkpoint ClassifierHead::to_checkpoint() const {
  return head_checkpoint(HeadType::CLASSIFIER,
                         {{"embed_dim", mlp.in_dim()},
                          {"hidden", mlp.hidden()},
                          {"label_space", label_space},
                          {"shared_across_modalities", kSharedAcrossModalities}},
                         params());
}

ClassifierHead ClassifierHead::from_checkpoint(const Checkpoint& ckpt) {
  check_head_type(ckpt, HeadType::CLASSIFIER);
  const json& c = ckpt.meta.at("config");
  ClassifierHead head(c.at("embed_dim").get<int>(),
                      c.at("label_space").get<std::vector<std::string>>(),
                      c.at("hidden").get<int>(), 0);
  restore_params(ckpt, head.params());
  return head;
}

// ---- SegmenterHead ----

SegmenterHead::SegmenterHead(int embed_dim, int patch_size, int grid, int num_classes, int hidden,
                             std::uint64_t seed)
    : patch_size_(patch_size), grid_(grid), num_classes_(num_classes) {
  if (patch_size < 1 || grid < 1 || num_classes < 1) {
    throw Error(Errc::ConfigError, "segmenter: sizes must be positive");
  }
  Rng rng = Rng::keyed(seed, "segmenter");
  mlp = Mlp("segmenter", embed_dim, hidden, patch_size * patch_size * num_classes, rng);
}

// Token (gy, gx) output index (py * p + px) * C + c maps to pixel
// (gy * p + py, gx * p + px), class c.
Tensor SegmenterHead::shuffle(const Tensor& token_out) const {
  const int p = patch_size_, g = grid_, C = num_classes_, W = g * p;
  Tensor pix(static_cast<std::size_t>(W * W), static_cast<std::size_t>(C));
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      const double* src = token_out.row(static_cast<std::size_t>(gy * g + gx)).data();
      for (int py = 0; py < p; ++py) {
        for (int px = 0; px < p; ++px) {
          double* dst = pix.row(static_cast<std::size_t>((gy * p + py) * W + gx * p + px)).data();
          std::copy_n(src + (py * p + px) * C, C, dst);
        }
      }
    }
  }
  return pix;
}

Tensor SegmenterHead::unshuffle(const Tensor& pixel_grad) const {
  const int p = patch_size_, g = grid_, C = num_classes_, W = g * p;
  Tensor tok(static_cast<std::size_t>(g * g), static_cast<std::size_t>(p * p * C));
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      double* dst = tok.row(static_cast<std::size_t>(gy * g + gx)).data();
      for (int py = 0; py < p; ++py) {
        for (int px = 0; px < p; ++px) {
          const double* src =
              pixel_grad.row(static_cast<std::size_t>((gy * p + py) * W + gx * p + px)).data();
          std::copy_n(src, C, dst + (py * p + px) * C);
        }
      }
    }
  }
  return tok;
}

Tensor SegmenterHead::logits(const Tensor& patches, Mlp::Cache* cache) const {
  check_dim(patches.cols(), static_cast<std::size_t>(mlp.in_dim()), "segmenter");
  check_dim(patches.rows(), static_cast<std::size_t>(grid_ * grid_), "segmenter tokens");
  return shuffle(mlp.forward(patches, cache));
}

Tensor SegmenterHead::backward(const Mlp::Cache& cache, const Tensor& dlogits) {
  return mlp.backward(cache, unshuffle(dlogits));
}

Tensor SegmenterHead::segment(const EmbeddingSet& emb, int out_size) const {
  if (out_size != image_size()) {
    throw Error(Errc::DimMismatch, "segment: out_size " + std::to_string(out_size) +
                                       " != head resolution " + std::to_string(image_size()));
  }
  Tensor p = nn::softmax_rows(logits(emb.patches));
  p.reshape({static_cast<std::size_t>(out_size), static_cast<std::size_t>(out_size),
             static_cast<std::size_t>(num_classes_)});
  return p;
}

nn::ParamRefs SegmenterHead::params() {
  nn::ParamRefs out;
  mlp.collect(out);
  return out;
}

nn::ConstParamRefs SegmenterHead::params() const {
  nn::ConstParamRefs out;
  mlp.collect(out);
  return out;
}

Checkpoint SegmenterHead::to_checkpoint() const {
  return head_checkpoint(HeadType::SEGMENTER,
                         {{"embed_dim", mlp.in_dim()},
                          {"hidden", mlp.hidden()},
                          {"patch_size", patch_size_},
                          {"grid", grid_},
                          {"num_classes", num_classes_}},
                         params());
}

SegmenterHead SegmenterHead::from_checkpoint(const Checkpoint& ckpt) {
  check_head_type(ckpt, HeadType::SEGMENTER);
  const json& c = ckpt.meta.at("config");
  SegmenterHead head(c.at("embed_dim").get<int>(), c.at("patch_size").get<int>(),
                     c.at("grid").get<int>(), c.at("num_classes").get<int>(),
                     c.at("hidden").get<int>(), 0);
  restore_params(ckpt, head.params());
  return head;
}

Mask argmax_mask(const Tensor& probs) {
  const std::size_t H = probs.shape()[0], W = probs.shape()[1], C = probs.shape()[2];
  Mask m(static_cast<int>(H), static_cast<int>(W));
  for (std::size_t i = 0; i < H * W; ++i) {
    const double* p = probs.data() + i * C;
    m.labels[i] = static_cast<std::uint8_t>(std::max_element(p, p + C) - p);
  }
  return m;
}

SegLoss segmentation_loss(const Tensor& logits, const Mask& truth, double dice_weight) {
  const std::size_t n = logits.rows(), C = logits.cols();
  if (truth.labels.size() != n) {
    throw Error(Errc::ShapeMismatch, "segmentation_loss: mask has " +
                                         std::to_string(truth.labels.size()) + " pixels, logits " +
                                         std::to_string(n));
  }
  const Tensor p = nn::softmax_rows(logits);
  SegLoss out;
  out.dlogits = Tensor(n, C);
  Tensor dp(n, C);  // dL/dp for the dice term

  double ce = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = truth.labels[i];
    if (y >= C) throw Error(Errc::OutOfRangeClass, "mask label " + std::to_string(y));
    ce -= std::log(std::max(p(i, y), 1e-300));
    for (std::size_t c = 0; c < C; ++c) out.dlogits(i, c) = (p(i, c) - (c == y ? 1.0 : 0.0)) / n;
  }
  out.loss = ce / static_cast<double>(n);

  if (dice_weight > 0.0 && C > 1) {
    constexpr double eps = 1.0;
    const double w = dice_weight / static_cast<double>(C - 1);
    double dice_sum = 0.0;
    for (std::size_t c = 1; c < C; ++c) {
      double inter = 0.0, psum = 0.0, ysum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double yi = truth.labels[i] == c ? 1.0 : 0.0;
        inter += p(i, c) * yi;
        psum += p(i, c);
        ysum += yi;
      }
      const double den = psum + ysum + eps, num = 2.0 * inter + eps;
      dice_sum += num / den;
      for (std::size_t i = 0; i < n; ++i) {
        const double yi = truth.labels[i] == c ? 1.0 : 0.0;
        dp(i, c) = -w * (2.0 * yi * den - num) / (den * den);
      }
    }
    out.loss += dice_weight * (1.0 - dice_sum / static_cast<double>(C - 1));
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += dp(i, c) * p(i, c);
      for (std::size_t c = 0; c < C; ++c) out.dlogits(i, c) += p(i, c) * (dp(i, c) - dot);
    }
  }
  if (!std::isfinite(out.loss)) throw Error(Errc::NonFiniteLoss, "segmentation loss");
  return out;
}

// ---- LandmarkHead ----

Point2 soft_argmax(std::span<const double> h, int height, int width) {
  if (h.size() != static_cast<std::size_t>(height * width)) {
    throw Error(Errc::DimMismatch, "soft_argmax: heatmap size mismatch");
  }
  const double mx = *std::max_element(h.begin(), h.end());
  double z = 0.0, sx = 0.0, sy = 0.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double e = std::exp(h[static_cast<std::size_t>(y * width + x)] - mx);
      z += e;
      sx += e * x;
      sy += e * y;
    }
  }
  return {sx / z, sy / z};
}

LandmarkHead::LandmarkHead(int embed_dim, int patch_size, int grid, int hidden, std::uint64_t seed)
    : seg_(embed_dim, patch_size, grid, kNumLandmarks, hidden, seed ^ 0x1a7d) {}

Tensor LandmarkHead::heatmaps(const Tensor& patches, Mlp::Cache* cache) const {
  const Tensor pix = seg_.logits(patches, cache);  // [HW x 3]
  Tensor out(kNumLandmarks, pix.rows());
  for (std::size_t i = 0; i < pix.rows(); ++i) {
    for (int k = 0; k < kNumLandmarks; ++k) out(k, i) = pix(i, k);
  }
  return out;
}

Tensor LandmarkHead::backward(const Mlp::Cache& cache, const Tensor& dheat) {
  Tensor dpix(dheat.cols(), kNumLandmarks);
  for (std::size_t i = 0; i < dheat.cols(); ++i) {
    for (int k = 0; k < kNumLandmarks; ++k) dpix(i, k) = dheat(k, i);
  }
  return seg_.backward(cache, dpix);
}

LandmarkSet LandmarkHead::detect_landmarks(const EmbeddingSet& emb, int size) const {
  if (size != image_size()) {
    throw Error(Errc::DimMismatch, "detect_landmarks: image_size " + std::to_string(size) +
                                       " != head resolution " + std::to_string(image_size()));
  }
  const Tensor h = heatmaps(emb.patches);
  LandmarkSet out;
  for (int k = 0; k < kNumLandmarks; ++k) {
    Point2 p = soft_argmax(h.row(k), size, size);
    p.x = std::clamp(p.x, 0.0, size - 1.0);
    p.y = std::clamp(p.y, 0.0, size - 1.0);
    out.points[k] = p;
  }
  return out;
}

Checkpoint LandmarkHead::to_checkpoint() const {
  return head_checkpoint(HeadType::LANDMARK,
                         {{"embed_dim", seg_.mlp.in_dim()},
                          {"hidden", seg_.mlp.hidden()},
                          {"patch_size", seg_.patch_size()},
                          {"grid", seg_.grid()}},
                         params());
}

LandmarkHead LandmarkHead::from_checkpoint(const Checkpoint& ckpt) {
  check_head_type(ckpt, HeadType::LANDMARK);
  const json& c = ckpt.meta.at("config");
  LandmarkHead head(c.at("embed_dim").get<int>(), c.at("patch_size").get<int>(),
                    c.at("grid").get<int>(), c.at("hidden").get<int>(), 0);
  restore_params(ckpt, head.params());
  return head;
}

LandmarkLoss landmark_loss(const Tensor& heat, int height, int width, const LandmarkSet& truth) {
  const std::size_t n = static_cast<std::size_t>(height * width);
  if (heat.rows() != LandmarkHead::kNumLandmarks || heat.cols() != n) {
    throw Error(Errc::ShapeMismatch, "landmark_loss: heatmaps " + shape_string(heat.shape()));
  }
  const double scale = std::pow(std::max(height, width) / 8.0, 2);
  LandmarkLoss out;
  out.dheatmaps = Tensor(heat.rows(), n);
  const Tensor p = nn::softmax_rows(heat);
  for (int k = 0; k < LandmarkHead::kNumLandmarks; ++k) {
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += p(k, i) * static_cast<double>(i % width);
      my += p(k, i) * static_cast<double>(i / width);
    }
    out.predicted.points[k] = {mx, my};
    const double dx = mx - truth.points[k].x, dy = my - truth.points[k].y;
    out.loss += (dx * dx + dy * dy) / (3.0 * scale);
    const double gx = 2.0 * dx / (3.0 * scale), gy = 2.0 * dy / (3.0 * scale);
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = static_cast<double>(i % width), yi = static_cast<double>(i / width);
      out.dheatmaps(k, i) = p(k, i) * (gx * (xi - mx) + gy * (yi - my));
    }
  }
  return out;
}

// ---- RegressorHead ----

RegressorHead::RegressorHead(int embed_dim, const PanelSpec& panel, int hidden, std::uint64_t seed)
    : panel_spec_id(panel.id) {
  for (const auto& b : panel.entries) {
    names.push_back(b.name);
    mean.push_back(b.mean);
    stddev.push_back(b.stddev);
  }
  Rng rng = Rng::keyed(seed, "regressor");
  mlp = Mlp("regressor", embed_dim, hidden, static_cast<int>(names.size()), rng);
}

Tensor RegressorHead::forward(const Tensor& cls, Mlp::Cache* cache) const {
  check_dim(cls.cols(), static_cast<std::size_t>(mlp.in_dim()), "regressor");
  return mlp.forward(cls, cache);
}

void RegressorHead::fit_standardization(const std::vector<BiomarkerPanel>& panels) {
  if (panels.empty()) return;
  for (std::size_t j = 0; j < names.size(); ++j) {
    double s = 0.0, ss = 0.0;
    for (const auto& p : panels) s += p.values.at(names[j]);
    const double m = s / static_cast<double>(panels.size());
    for (const auto& p : panels) ss += std::pow(p.values.at(names[j]) - m, 2);
    const double sd = std::sqrt(ss / static_cast<double>(panels.size()));
    mean[j] = m;
    stddev[j] = sd > 1e-12 ? sd : 1.0;
  }
}

std::vector<double> RegressorHead::standardize(const BiomarkerPanel& panel) const {
  std::vector<double> z(names.size());
  for (std::size_t j = 0; j < names.size(); ++j) {
    const auto it = panel.values.find(names[j]);
    if (it == panel.values.end()) throw Error(Errc::PanelMismatch, "missing " + names[j]);
    z[j] = (it->second - mean[j]) / stddev[j];
  }
  return z;
}

BiomarkerPanel RegressorHead::destandardize(std::span<const double> z) const {
  check_dim(z.size(), names.size(), "destandardize");
  BiomarkerPanel out;
  out.panel_spec_id = panel_spec_id;
  for (std::size_t j = 0; j < names.size(); ++j) out.values[names[j]] = mean[j] + stddev[j] * z[j];
  return out;
}

BiomarkerPanel RegressorHead::regress_biomarkers(const EmbeddingSet& emb) const {
  const Tensor z = forward(row_tensor(emb.cls));
  return destandardize(z.values());
}

nn::ParamRefs RegressorHead::params() {
  nn::ParamRefs out;
  mlp.collect(out);
  return out;
}

nn::ConstParamRefs RegressorHead::params() const {
  nn::ConstParamRefs out;
  mlp.collect(out);
  return out;
}

Checkpoint RegressorHead::to_checkpoint() const {
  return head_checkpoint(HeadType::REGRESSOR,
                         {{"embed_dim", mlp.in_dim()},
                          {"hidden", mlp.hidden()},
                          {"panel_spec_id", panel_spec_id},
                          {"names", names},
                          {"mean", mean},
                          {"std", stddev}},
                         params());
}

RegressorHead RegressorHead::from_checkpoint(const Checkpoint& ckpt) {
  check_head_type(ckpt, HeadType::REGRESSOR);
  const json& c = ckpt.meta.at("config");
  PanelSpec spec;
  spec.id = c.at("panel_spec_id").get<std::string>();
  for (const auto& n : c.at("names")) spec.entries.push_back({n.get<std::string>(), "", 0.0, 1.0});
  RegressorHead head(c.at("embed_dim").get<int>(), spec, c.at("hidden").get<int>(), 0);
  head.mean = c.at("mean").get<std::vector<double>>();
  head.stddev = c.at("std").get<std::vector<double>>();
  restore_params(ckpt, head.params());
  return head;
}

// ---- ForecastHead ----

ForecastHead::ForecastHead(int embed_dim, std::uint64_t seed) {
  Rng rng = Rng::keyed(seed, "forecast");
  linear = nn::Linear("forecast", static_cast<std::size_t>(embed_dim) + 1, 1, rng, 0.5);
}

Tensor ForecastHead::make_input(std::span<const double> cls, double delta_days) {
  if (!(delta_days > 0.0)) {
    throw Error(Errc::NonPositiveInterval, "delta_days = " + std::to_string(delta_days));
  }
  Tensor x(1, cls.size() + 1);
  std::copy(cls.begin(), cls.end(), x.data());
  x[cls.size()] = delta_days / kIntervalScaleDays;
  return x;
}

double ForecastHead::forecast(const EmbeddingSet& emb, double delta_days) const {
  check_dim(emb.cls.size() + 1, linear.in_dim(), "forecast");
  return sigmoid(logits(make_input(emb.cls, delta_days))[0]);
}

nn::ParamRefs ForecastHead::params() {
  nn::ParamRefs out;
  linear.collect(out);
  return out;
}

nn::ConstParamRefs ForecastHead::params() const {
  nn::ConstParamRefs out;
  linear.collect(out);
  return out;
}

Checkpoint ForecastHead::to_checkpoint() const {
  return head_checkpoint(HeadType::FORECASTER,
                         {{"embed_dim", linear.in_dim() - 1},
                          {"delta_scale_days", kIntervalScaleDays}},
                         params());
}

ForecastHead ForecastHead::from_checkpoint(const Checkpoint& ckpt) {
  check_head_type(ckpt, HeadType::FORECASTER);
  ForecastHead head(ckpt.meta.at("config").at("embed_dim").get<int>(), 0);
  restore_params(ckpt, head.params());
  return head;
}

}  // namespace vfm
