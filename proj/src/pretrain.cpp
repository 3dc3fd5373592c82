#include "vfm/pretrain.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <utility>

#include "vfm/error.hpp"

namespace vfm {

using nlohmann::json;

void SelfDistillConfig::validate() const {
  auto bad = [](const std::string& why) { throw Error(Errc::ConfigError, "pretrain: " + why); };
  if (n_global_crops < 1) bad("n_global_crops must be >= 1");
  if (n_local_crops < 0) bad("n_local_crops must be >= 0");
  if (n_global_crops + n_local_crops < 2) bad("need at least two crops");
  if (!(teacher_temp > 0.0 && teacher_temp < student_temp)) bad("require 0 < teacher_temp < student_temp");
  if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) bad("ema_momentum must lie in [0, 1]");
  if (!(center_momentum >= 0.0 && center_momentum <= 1.0)) bad("center_momentum must lie in [0, 1]");
  if (!(local_crop_frac < global_crop_frac)) bad("local_crop_frac must be < global_crop_frac");
  if (!(local_crop_frac > 0.0)) bad("crop fractions must be positive");
  if (proj_dim < 2) bad("proj_dim must be >= 2");
  if (steps < 0 || batch_size < 1) bad("steps >= 0 and batch_size >= 1 required");
  if (!(lr > 0.0)) bad("lr must be positive");
  if (checkpoint_every < 0) bad("checkpoint_every must be >= 0");
  if (head_batchnorm && batch_size * n_global_crops < 2) {
    bad("head_batchnorm needs batch_size * n_global_crops >= 2");
  }
}

json self_distill_config_to_json(const SelfDistillConfig& c) {
  return {{"n_global_crops", c.n_global_crops},   {"n_local_crops", c.n_local_crops},
          {"global_crop_frac", c.global_crop_frac}, {"local_crop_frac", c.local_crop_frac},
          {"proj_dim", c.proj_dim},               {"proj_hidden", c.proj_hidden},
          {"head_batchnorm", c.head_batchnorm},
          {"student_temp", c.student_temp},       {"teacher_temp", c.teacher_temp},
          {"ema_momentum", c.ema_momentum},       {"center_momentum", c.center_momentum},
          {"centering", c.centering},             {"steps", c.steps},
          {"batch_size", c.batch_size},           {"lr", c.lr},
          {"seed", c.seed},                       {"checkpoint_every", c.checkpoint_every}};
}

SelfDistillConfig self_distill_config_from_json(const json& j) {
  SelfDistillConfig c;
  const json defaults = self_distill_config_to_json(c);
  for (const auto& item : j.items()) {
    if (!defaults.contains(item.key())) {
      throw Error(Errc::ConfigError, "pretrain: unknown key '" + item.key() + "'");
    }
  }
  try {
    c.n_global_crops = j.value("n_global_crops", c.n_global_crops);
    c.n_local_crops = j.value("n_local_crops", c.n_local_crops);
    c.global_crop_frac = j.value("global_crop_frac", c.global_crop_frac);
    c.local_crop_frac = j.value("local_crop_frac", c.local_crop_frac);
    c.proj_dim = j.value("proj_dim", c.proj_dim);
    c.proj_hidden = j.value("proj_hidden", c.proj_hidden);
    c.head_batchnorm = j.value("head_batchnorm", c.head_batchnorm);
    c.student_temp = j.value("student_temp", c.student_temp);
    c.teacher_temp = j.value("teacher_temp", c.teacher_temp);
    c.ema_momentum = j.value("ema_momentum", c.ema_momentum);
    c.center_momentum = j.value("center_momentum", c.center_momentum);
    c.centering = j.value("centering", c.centering);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("pretrain: ") + e.what());
  }
  c.validate();
  return c;
}

MultiCrop multi_crop(const Image& image, const SelfDistillConfig& cfg, Rng& rng, int out_size) {
  if (cfg.global_crop_frac > 1.0 || cfg.local_crop_frac > 1.0) {
    throw Error(Errc::CropLargerThanImage, "crop fraction exceeds 1");
  }
  if (!(cfg.local_crop_frac < cfg.global_crop_frac) || cfg.local_crop_frac <= 0.0) {
    throw Error(Errc::ConfigError, "crop fractions must satisfy 0 < local < global");
  }
  const double side = std::min(image.height, image.width);
  auto draw = [&](double frac, std::vector<Image>& crops, std::vector<CropBox>& boxes, int n) {
    const double crop = frac * side;
    for (int i = 0; i < n; ++i) {
      CropBox b;
      b.side = crop;
      b.y0 = rng.uniform() * (image.height - crop);
      b.x0 = rng.uniform() * (image.width - crop);
      boxes.push_back(b);
      crops.push_back(crop_resize(image, b.y0, b.x0, crop, crop, out_size, out_size));
    }
  };
  MultiCrop mc;
  draw(cfg.global_crop_frac, mc.global, mc.global_boxes, cfg.n_global_crops);
  draw(cfg.local_crop_frac, mc.local, mc.local_boxes, cfg.n_local_crops);
  return mc;
}

ProjectionHead::ProjectionHead(int in_dim, int hidden, int out_dim, bool batchnorm, Rng& rng)
    : fc1("proj.fc1", static_cast<std::size_t>(in_dim), static_cast<std::size_t>(hidden), rng),
      // Small output init keeps the first teacher targets close to uniform.
      fc2("proj.fc2", static_cast<std::size_t>(hidden), static_cast<std::size_t>(out_dim), rng,
          0.05),
      batchnorm_(batchnorm) {
  if (batchnorm_) {
    bn_gamma = nn::Param("proj.bn.gamma", Tensor(1, static_cast<std::size_t>(hidden), 1.0));
    bn_beta = nn::Param("proj.bn.beta", Tensor(1, static_cast<std::size_t>(hidden), 0.0));
  }
}

Tensor ProjectionHead::forward(const Tensor& x, Cache* cache) const {
  Tensor pre = fc1.forward(x);
  Tensor normed;
  std::vector<double> rstd;
  if (batchnorm_) {
    const std::size_t n = pre.rows(), h = pre.cols();
    if (n < 2) throw Error(Errc::ShapeMismatch, "projection batch norm needs >= 2 rows");
    normed = Tensor(n, h);
    rstd.resize(h);
    for (std::size_t j = 0; j < h; ++j) {
      double mean = 0.0, var = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += pre(i, j);
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) var += (pre(i, j) - mean) * (pre(i, j) - mean);
      rstd[j] = 1.0 / std::sqrt(var / static_cast<double>(n) + bn_eps);
      for (std::size_t i = 0; i < n; ++i) normed(i, j) = (pre(i, j) - mean) * rstd[j];
    }
  }
  Tensor act;
  if (batchnorm_) {
    Tensor affine = normed;
    for (std::size_t i = 0; i < affine.rows(); ++i) {
      for (std::size_t j = 0; j < affine.cols(); ++j) {
        affine(i, j) = affine(i, j) * bn_gamma.value[j] + bn_beta.value[j];
      }
    }
    act = nn::gelu(affine);
    pre = std::move(affine);  // GELU input
  } else {
    act = nn::gelu(pre);
  }
  Tensor out = fc2.forward(act);
  if (cache) {
    cache->input = x;
    cache->pre = std::move(pre);
    cache->normed = std::move(normed);
    cache->act = std::move(act);
    cache->rstd = std::move(rstd);
  }
  return out;
}

Tensor ProjectionHead::backward(const Cache& cache, const Tensor& dy) {
  const Tensor dact = fc2.backward(cache.act, dy);
  Tensor dpre = nn::gelu_backward(cache.pre, dact);
  if (batchnorm_) {
    const std::size_t n = dpre.rows(), h = dpre.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < h; ++j) {
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        bn_gamma.grad[j] += dpre(i, j) * cache.normed(i, j);
        bn_beta.grad[j] += dpre(i, j);
        const double dxhat = dpre(i, j) * bn_gamma.value[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * cache.normed(i, j);
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double dxhat = dpre(i, j) * bn_gamma.value[j];
        dpre(i, j) = cache.rstd[j] * (dxhat - inv_n * sum_dxhat -
                                      cache.normed(i, j) * inv_n * sum_dxhat_xhat);
      }
    }
  }
  return fc1.backward(cache.input, dpre);
}

nn::ParamRefs ProjectionHead::params() {
  nn::ParamRefs out;
  fc1.collect(out);
  if (batchnorm_) {
    out.push_back(&bn_gamma);
    out.push_back(&bn_beta);
  }
  fc2.collect(out);
  return out;
}

nn::ConstParamRefs ProjectionHead::params() const {
  nn::ConstParamRefs out;
  fc1.collect(out);
  if (batchnorm_) {
    out.push_back(&bn_gamma);
    out.push_back(&bn_beta);
  }
  fc2.collect(out);
  return out;
}

namespace {

void check_distill_shapes(const Tensor& s, const Tensor& t, std::span<const double> center,
                          double ts, double tt) {
  if (!s.same_shape(t) || s.rank() != 2 || center.size() != t.cols()) {
    throw Error(Errc::ShapeMismatch, "student " + shape_string(s.shape()) + ", teacher " +
                                         shape_string(t.shape()) + ", center " +
                                         std::to_string(center.size()));
  }
  if (!(ts > 0.0) || !(tt > 0.0)) throw Error(Errc::ConfigError, "temperatures must be positive");
}

Tensor teacher_probs(const Tensor& t, std::span<const double> center, double tt) {
  Tensor centred = t;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) centred(r, c) -= center[c];
  }
  return nn::softmax_rows(centred, 1.0 / tt);
}

}  // namespace

DistillLoss distillation_loss_with_grad(const Tensor& s, const Tensor& t,
                                        std::span<const double> center, double ts, double tt) {
  check_distill_shapes(s, t, center, ts, tt);
  const Tensor pt = teacher_probs(t, center, tt);
  const Tensor log_ps = nn::log_softmax_rows(s, 1.0 / ts);
  const std::size_t B = s.rows(), K = s.cols();
  DistillLoss out;
  out.dstudent = Tensor(B, K);
  double total = 0.0;
  for (std::size_t r = 0; r < B; ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < K; ++c) {
      row -= pt(r, c) * log_ps(r, c);
      out.dstudent(r, c) = (std::exp(log_ps(r, c)) - pt(r, c)) / (ts * static_cast<double>(B));
    }
    total += row;
  }
  out.loss = total / static_cast<double>(B);
  if (!std::isfinite(out.loss)) throw Error(Errc::NonFiniteLoss, "distillation loss");
  return out;
}

double distillation_loss(const Tensor& s, const Tensor& t, std::span<const double> center,
                         double ts, double tt) {
  return distillation_loss_with_grad(s, t, center, ts, tt).loss;
}

double teacher_entropy(const Tensor& t, std::span<const double> center, double tt) {
  const Tensor pt = teacher_probs(t, center, tt);
  double total = 0.0;
  for (double p : pt.values()) {
    if (p > 0.0) total -= p * std::log(p);
  }
  return total / static_cast<double>(t.rows());
}

void ema_update(Tensor& teacher, const Tensor& student, double m) {
  if (!teacher.same_shape(student)) {
    throw Error(Errc::ShapeMismatch,
                shape_string(teacher.shape()) + " vs " + shape_string(student.shape()));
  }
  auto t = teacher.values();
  auto s = student.values();
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = m * t[i] + (1.0 - m) * s[i];
}

void ema_update(const nn::ParamRefs& teacher, const nn::ConstParamRefs& student, double m) {
  if (teacher.size() != student.size()) {
    throw Error(Errc::ShapeMismatch, "teacher/student parameter count differs");
  }
  for (std::size_t i = 0; i < teacher.size(); ++i) ema_update(teacher[i]->value, student[i]->value, m);
}

void center_update(std::vector<double>& center, std::span<const double> mean, double m) {
  if (center.size() != mean.size()) {
    throw Error(Errc::ShapeMismatch, "center " + std::to_string(center.size()) + " vs mean " +
                                         std::to_string(mean.size()));
  }
  for (std::size_t i = 0; i < center.size(); ++i) center[i] = m * center[i] + (1.0 - m) * mean[i];
}

PretrainState init_pretrain_state(const EncoderConfig& enc_cfg, Modality modality,
                                  const SelfDistillConfig& cfg) {
  PretrainState st;
  st.student = Encoder(enc_cfg, modality, cfg.seed);
  Rng rng = Rng::keyed(cfg.seed, "projection_head");
  const int hidden = cfg.proj_hidden > 0 ? cfg.proj_hidden : 2 * enc_cfg.embed_dim;
  st.student_head = ProjectionHead(enc_cfg.embed_dim, hidden, cfg.proj_dim, cfg.head_batchnorm, rng);
  st.teacher = st.student;
  st.teacher_head = st.student_head;
  st.center.assign(static_cast<std::size_t>(cfg.proj_dim), 0.0);
  return st;
}


namespace {

// Rough size of one encoder activation cache, used to decide whether the
// student caches are kept between the forward and backward passes.
std::size_t cache_bytes(const EncoderConfig& c) {
  const std::size_t t = static_cast<std::size_t>(c.num_patches() + 1);
  const std::size_t d = static_cast<std::size_t>(c.embed_dim);
  const std::size_t per_block = t * d * (10 + 2 * static_cast<std::size_t>(c.mlp_ratio)) +
                                static_cast<std::size_t>(c.n_heads) * t * t;
  return sizeof(double) * (per_block * static_cast<std::size_t>(c.depth) + 3 * t * d);
}

constexpr std::size_t kCacheBudgetBytes = std::size_t{256} << 20;

}  // namespace

double pretrain_step(PretrainState& st, nn::Adam& optimizer,
                     const std::vector<const Image*>& batch,
                     const std::vector<std::string>& keys, const SelfDistillConfig& cfg) {
  const EncoderConfig& ec = st.student.config();
  const int size = ec.image_size;
  const int P = ec.patch_size;
  const std::size_t D = static_cast<std::size_t>(ec.embed_dim);
  const std::size_t K = static_cast<std::size_t>(cfg.proj_dim);
  const std::size_t G = static_cast<std::size_t>(cfg.n_global_crops);
  const std::size_t V = G + static_cast<std::size_t>(cfg.n_local_crops);
  const std::size_t B = batch.size();
  optimizer.zero_grad();

  // Crop inputs, laid out image-major: view v of image b is row b * V + v.
  std::vector<Tensor> inputs;
  inputs.reserve(B * V);
  for (std::size_t b = 0; b < B; ++b) {
    Rng rng = Rng::keyed(cfg.seed ^ static_cast<std::uint64_t>(st.step) * 0x9e3779b97f4a7c15ULL,
                         keys[b]);
    MultiCrop mc = multi_crop(*batch[b], cfg, rng, size);
    for (const auto& g : mc.global) inputs.push_back(patchify(g, P));
    for (const auto& l : mc.local) inputs.push_back(patchify(l, P));
  }

  // Teacher: global views only.
  Tensor teacher_cls(B * G, D);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t g = 0; g < G; ++g) {
      const Tensor out = st.teacher.forward(inputs[b * V + g]);
      std::copy(out.data(), out.data() + D, teacher_cls.row(b * G + g).data());
    }
  }
  const Tensor teacher_logits = st.teacher_head.forward(teacher_cls);

  // Student: every view.
  const bool keep_caches = cache_bytes(ec) * B * V <= kCacheBudgetBytes;
  std::vector<EncoderCache> caches(keep_caches ? B * V : 0);
  Tensor student_cls(B * V, D);
  for (std::size_t r = 0; r < B * V; ++r) {
    const Tensor out = st.student.forward(inputs[r], keep_caches ? &caches[r] : nullptr);
    std::copy(out.data(), out.data() + D, student_cls.row(r).data());
  }
  ProjectionHead::Cache head_cache;
  const Tensor student_logits = st.student_head.forward(student_cls, &head_cache);

  // Pairs (teacher view g, student view v) with g != v.
  std::size_t n_pairs = 0;
  for (std::size_t v = 0; v < V; ++v) {
    for (std::size_t g = 0; g < G; ++g) n_pairs += (g != v);
  }
  const double pair_weight = 1.0 / static_cast<double>(n_pairs * B);
  double batch_loss = 0.0;
  Tensor dlogits(B * V, K);
  Tensor s(1, K), t(1, K);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t v = 0; v < V; ++v) {
      const std::size_t r = b * V + v;
      std::copy(student_logits.row(r).begin(), student_logits.row(r).end(), s.data());
      for (std::size_t g = 0; g < G; ++g) {
        if (g == v) continue;
        std::copy(teacher_logits.row(b * G + g).begin(), teacher_logits.row(b * G + g).end(),
                  t.data());
        const DistillLoss dl =
            distillation_loss_with_grad(s, t, st.center, cfg.student_temp, cfg.teacher_temp);
        batch_loss += dl.loss * pair_weight;
        for (std::size_t k = 0; k < K; ++k) dlogits(r, k) += dl.dstudent[k] * pair_weight;
      }
    }
  }
  if (!std::isfinite(batch_loss)) {
    throw Error(Errc::DivergedLoss, "loss became non-finite at step " + std::to_string(st.step));
  }

  const Tensor dcls = st.student_head.backward(head_cache, dlogits);
  const std::size_t T = static_cast<std::size_t>(ec.num_patches() + 1);
  for (std::size_t r = 0; r < B * V; ++r) {
    Tensor dout(T, D);
    std::copy(dcls.row(r).begin(), dcls.row(r).end(), dout.data());
    if (keep_caches) {
      st.student.backward(caches[r], dout);
    } else {
      EncoderCache cache;
      st.student.forward(inputs[r], &cache);
      st.student.backward(cache, dout);
    }
  }

  optimizer.step();
  auto teacher_params = st.teacher.params();
  auto th = st.teacher_head.params();
  teacher_params.insert(teacher_params.end(), th.begin(), th.end());
  nn::ConstParamRefs student_params = std::as_const(st.student).params();
  auto sh = std::as_const(st.student_head).params();
  student_params.insert(student_params.end(), sh.begin(), sh.end());
  ema_update(teacher_params, student_params, cfg.ema_momentum);
  if (cfg.centering) {
    std::vector<double> mean(K, 0.0);
    for (std::size_t r = 0; r < teacher_logits.rows(); ++r) {
      for (std::size_t k = 0; k < K; ++k) mean[k] += teacher_logits(r, k);
    }
    for (double& v : mean) v /= static_cast<double>(teacher_logits.rows());
    center_update(st.center, mean, cfg.center_momentum);
  }
  ++st.step;
  st.student.set_train_step(st.step);
  st.teacher.set_train_step(st.step);
  st.loss_history.push_back(batch_loss);
  return batch_loss;
}

Image conform_image(const Image& image, const EncoderConfig& cfg) {
  Image img = image;
  if (img.channels != cfg.in_channels) {
    if (cfg.in_channels == 1) {
      img = to_grayscale(img);
    } else {
      Image rgb(img.height, img.width, cfg.in_channels);
      const Image gray = to_grayscale(img);
      for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
          for (int c = 0; c < cfg.in_channels; ++c) rgb.at(y, x, c) = gray.at(y, x);
        }
      }
      img = std::move(rgb);
    }
  }
  if (img.height != cfg.image_size || img.width != cfg.image_size) {
    img = crop_resize(img, 0, 0, img.height, img.width, cfg.image_size, cfg.image_size);
  }
  return img;
}

PretrainResult pretrain_images(const std::vector<Image>& images,
                               const std::vector<std::string>& keys, Modality modality,
                               const EncoderConfig& enc_cfg, const SelfDistillConfig& cfg,
                               const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  enc_cfg.validate();
  if (images.empty()) throw Error(Errc::EmptyManifest, "no images to pretrain on");
  PretrainResult result;
  result.state = init_pretrain_state(enc_cfg, modality, cfg);
  PretrainState& st = result.state;

  nn::ParamRefs trainable = st.student.params();
  auto head = st.student_head.params();
  trainable.insert(trainable.end(), head.begin(), head.end());
  nn::AdamConfig opt;
  opt.lr = cfg.lr;
  opt.beta1 = 0.0;
  nn::Adam optimizer(trainable, opt);

  if (out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*out_dir, ec);
    if (ec) throw Error(Errc::UnwritableOutputDir, out_dir->string());
  }
  auto save = [&](const std::filesystem::path& path) { st.teacher.save(path); };

  Rng sampler = Rng::keyed(cfg.seed, "batch_sampler");
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  for (int s = 0; s < cfg.steps; ++s) {
    std::vector<const Image*> batch;
    std::vector<std::string> batch_keys;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        order.resize(images.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        sampler.shuffle(order);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      batch.push_back(&images[idx]);
      batch_keys.push_back(keys[idx]);
    }
    pretrain_step(st, optimizer, batch, batch_keys, cfg);
    if (cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0) {
      result.checkpoint_steps.push_back(st.step);
      if (out_dir) {
        char name[64];
        std::snprintf(name, sizeof(name), "checkpoint_%06lld.ckpt", st.step);
        save(*out_dir / name);
        result.checkpoint_paths.push_back(*out_dir / name);
      }
    }
  }
  if (out_dir) {
    save(*out_dir / "encoder_final.ckpt");
    result.final_checkpoint = *out_dir / "encoder_final.ckpt";
    std::ofstream csv(*out_dir / "loss_history.csv");
    if (!csv) throw Error(Errc::UnwritablePath, (*out_dir / "loss_history.csv").string());
    csv << "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < st.loss_history.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i + 1, st.loss_history[i]);
      csv << buf;
    }
  }
  return result;
}

PretrainResult pretrain(const Manifest& manifest, const EncoderConfig& enc_cfg,
                        const SelfDistillConfig& cfg,
                        const std::optional<std::filesystem::path>& out_dir) {
  if (manifest.records.empty()) throw Error(Errc::EmptyManifest, "manifest has no records");
  const Modality modality = manifest.records.front().modality;
  std::vector<Image> images;
  std::vector<std::string> keys;
  for (const auto& rec : manifest.records) {
    if (rec.modality != modality) {
      throw Error(Errc::MixedModalities, "record " + rec.id + " is " +
                                             std::string(modality_name(rec.modality)) +
                                             ", expected " + std::string(modality_name(modality)));
    }
    images.push_back(conform_image(manifest.load_image(rec), enc_cfg));
    keys.push_back(rec.id);
  }
  return pretrain_images(images, keys, modality, enc_cfg, cfg, out_dir);
}

double projection_std(const PretrainState& st, const std::vector<Image>& probe,
                      const SelfDistillConfig& cfg) {
  if (probe.size() < 2) throw Error(Errc::TooFewSamples, "probe batch needs >= 2 images");
  const std::size_t K = static_cast<std::size_t>(cfg.proj_dim);
  const std::size_t D = static_cast<std::size_t>(st.student.config().embed_dim);
  Tensor cls(probe.size(), D);
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const Tensor out = st.student.forward(patchify(probe[i], st.student.config().patch_size));
    std::copy(out.data(), out.data() + D, cls.row(i).data());
  }
  const Tensor probs = nn::softmax_rows(st.student_head.forward(cls), 1.0 / cfg.student_temp);
  double total = 0.0;
  const double n = static_cast<double>(probe.size());
  for (std::size_t k = 0; k < K; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) mean += probs(i, k);
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) var += (probs(i, k) - mean) * (probs(i, k) - mean);
    total += std::sqrt(var / n);
  }
  return total / static_cast<double>(K);
}

}  // namespace vfm
