#include "vfm/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vfm/error.hpp"

namespace vfm {

std::vector<Tensor> encode_all(const Encoder& encoder, const std::vector<Image>& images) {
  std::vector<Tensor> out(images.size());
  const int p = encoder.config().patch_size;
  for (std::size_t i = 0; i < images.size(); ++i) out[i] = encoder.forward(patchify(images[i], p));
  return out;
}

EmbeddingSet split_tokens(const Tensor& tokens) {
  EmbeddingSet e;
  const std::size_t D = tokens.cols();
  e.cls.assign(tokens.row(0).begin(), tokens.row(0).end());
  e.patches = Tensor(tokens.rows() - 1, D);
  std::copy(tokens.data() + D, tokens.data() + tokens.size(), e.patches.data());
  return e;
}

namespace {

// Epoch-style sampler: reshuffles a permutation whenever it runs out.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : rng_(Rng::keyed(seed, "batches")), order_(n) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n;
  }
  std::vector<std::size_t> next(std::size_t b) {
    std::vector<std::size_t> out;
    while (out.size() < b) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_;
};

double schedule(const TrainOptions& opt, int step) {
  if (!opt.cosine_decay || opt.steps <= 1) return 1.0;
  return 0.5 * (1.0 + std::cos(M_PI * step / static_cast<double>(opt.steps)));
}

void check_loss(double loss, int step) {
  if (!std::isfinite(loss)) {
    throw Error(Errc::DivergedLoss, "non-finite training loss at step " + std::to_string(step));
  }
}

Tensor cls_row(const Tensor& tokens) {
  Tensor t(1, tokens.cols());
  std::copy(tokens.row(0).begin(), tokens.row(0).end(), t.data());
  return t;
}

Tensor patch_rows(const Tensor& tokens) {
  Tensor t(tokens.rows() - 1, tokens.cols());
  std::copy(tokens.data() + tokens.cols(), tokens.data() + tokens.size(), t.data());
  return t;
}

Tensor cls_grad(const Tensor& dcls, std::size_t rows) {
  Tensor d(rows, dcls.cols());
  std::copy(dcls.data(), dcls.data() + dcls.size(), d.data());
  return d;
}

Tensor patch_grad(const Tensor& dpatches) {
  Tensor d(dpatches.rows() + 1, dpatches.cols());
  std::copy(dpatches.data(), dpatches.data() + dpatches.size(), d.data() + dpatches.cols());
  return d;
}

}  // namespace

TrainResult train_on_features(const std::vector<Tensor>& tokens, const nn::ParamRefs& head_params,
                              const SampleLoss& loss, const TrainOptions& opt) {
  if (tokens.empty()) throw Error(Errc::EmptyManifest, "no training samples");
  nn::AdamConfig acfg;
  acfg.lr = opt.lr;
  acfg.weight_decay = opt.weight_decay;
  nn::Adam adam(head_params, acfg);
  BatchSampler sampler(tokens.size(), opt.seed);
  const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(opt.batch_size), tokens.size());
  TrainResult result;
  for (int step = 0; step < opt.steps; ++step) {
    adam.zero_grad();
    double total = 0.0;
    for (std::size_t i : sampler.next(b)) total += loss(i, tokens[i], 1.0 / b, nullptr);
    total /= static_cast<double>(b);
    check_loss(total, step);
    adam.set_lr(opt.lr * schedule(opt, step));
    adam.step();
    result.loss_history.push_back(total);
  }
  return result;
}

TrainResult train_head(Encoder& encoder, const std::vector<Image>& images,
                       const nn::ParamRefs& head_params, const SampleLoss& loss,
                       const TrainOptions& opt) {
  return train_head_multi({&encoder}, std::vector<std::size_t>(images.size(), 0), images,
                          head_params, loss, opt);
}

TrainResult train_head_multi(const std::vector<Encoder*>& encoders,
                             const std::vector<std::size_t>& owner,
                             const std::vector<Image>& images, const nn::ParamRefs& head_params,
                             const SampleLoss& loss, const TrainOptions& opt) {
  if (images.empty()) throw Error(Errc::EmptyManifest, "no training samples");
  if (owner.size() != images.size()) throw Error(Errc::ShapeMismatch, "owner/image count differ");
  for (std::size_t o : owner) {
    if (o >= encoders.size()) throw Error(Errc::ShapeMismatch, "owner index out of range");
  }
  if (!opt.finetune_encoder) {
    std::vector<Tensor> tokens(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
      const Encoder& e = *encoders[owner[i]];
      tokens[i] = e.forward(patchify(images[i], e.config().patch_size));
    }
    return train_on_features(tokens, head_params, loss, opt);
  }
  std::vector<Tensor> inputs;
  inputs.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    inputs.push_back(patchify(images[i], encoders[owner[i]]->config().patch_size));
  }

  nn::AdamConfig hcfg;
  hcfg.lr = opt.lr;
  hcfg.weight_decay = opt.weight_decay;
  nn::Adam head_opt(head_params, hcfg);
  nn::AdamConfig ecfg;
  ecfg.lr = opt.encoder_lr;
  std::vector<nn::Adam> enc_opts;
  for (Encoder* e : encoders) enc_opts.emplace_back(e->params(), ecfg);

  BatchSampler sampler(images.size(), opt.seed);
  const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(opt.batch_size), images.size());
  TrainResult result;
  for (int step = 0; step < opt.steps; ++step) {
    head_opt.zero_grad();
    for (auto& eo : enc_opts) eo.zero_grad();
    double total = 0.0;
    for (std::size_t i : sampler.next(b)) {
      Encoder& enc = *encoders[owner[i]];
      EncoderCache cache;
      const Tensor out = enc.forward(inputs[i], &cache);
      Tensor dout(out.shape());
      total += loss(i, out, 1.0 / b, &dout);
      enc.backward(cache, dout);
    }
    total /= static_cast<double>(b);
    check_loss(total, step);
    const double f = schedule(opt, step);
    head_opt.set_lr(opt.lr * f);
    head_opt.step();
    for (std::size_t k = 0; k < encoders.size(); ++k) {
      enc_opts[k].set_lr(opt.encoder_lr * f);
      enc_opts[k].step();
      encoders[k]->set_train_step(encoders[k]->train_step() + 1);
    }
    result.loss_history.push_back(total);
  }
  return result;
}

SampleLoss classifier_objective(ClassifierHead& head, const std::vector<int>& labels) {
  return [&head, &labels](std::size_t i, const Tensor& tokens, double w, Tensor* dtokens) {
    Mlp::Cache cache;
    const Tensor z = head.logits(cls_row(tokens), &cache);
    const int y = labels.at(i);
    if (y < 0 || y >= head.num_classes()) {
      throw Error(Errc::OutOfRangeClass, "label " + std::to_string(y));
    }
    const Tensor logp = nn::log_softmax_rows(z);
    Tensor dz(1, z.cols());
    for (std::size_t c = 0; c < z.cols(); ++c) {
      dz[c] = w * (std::exp(logp[c]) - (static_cast<int>(c) == y ? 1.0 : 0.0));
    }
    const Tensor dx = head.backward(cache, dz);
    if (dtokens) *dtokens = cls_grad(dx, tokens.rows());
    return -logp[static_cast<std::size_t>(y)];
  };
}

SampleLoss segmenter_objective(SegmenterHead& head, const std::vector<Mask>& masks,
                               double dice_weight) {
  return [&head, &masks, dice_weight](std::size_t i, const Tensor& tokens, double w,
                                      Tensor* dtokens) {
    Mlp::Cache cache;
    const Tensor z = head.logits(patch_rows(tokens), &cache);
    SegLoss l = segmentation_loss(z, masks.at(i), dice_weight);
    l.dlogits *= w;
    const Tensor dx = head.backward(cache, l.dlogits);
    if (dtokens) *dtokens = patch_grad(dx);
    return l.loss;
  };
}

SampleLoss landmark_objective(LandmarkHead& head, const std::vector<LandmarkSet>& targets) {
  return [&head, &targets](std::size_t i, const Tensor& tokens, double w, Tensor* dtokens) {
    Mlp::Cache cache;
    const Tensor h = head.heatmaps(patch_rows(tokens), &cache);
    const int s = head.image_size();
    LandmarkLoss l = landmark_loss(h, s, s, targets.at(i));
    l.dheatmaps *= w;
    const Tensor dx = head.backward(cache, l.dheatmaps);
    if (dtokens) *dtokens = patch_grad(dx);
    return l.loss;
  };
}

SampleLoss regressor_objective(RegressorHead& head, const std::vector<std::vector<double>>& targets) {
  return [&head, &targets](std::size_t i, const Tensor& tokens, double w, Tensor* dtokens) {
    Mlp::Cache cache;
    const Tensor z = head.forward(cls_row(tokens), &cache);
    const auto& t = targets.at(i);
    if (t.size() != z.cols()) throw Error(Errc::PanelMismatch, "target width");
    Tensor dz(1, z.cols());
    double loss = 0.0;
    for (std::size_t j = 0; j < z.cols(); ++j) {
      const double e = z[j] - t[j];
      loss += e * e;
      dz[j] = w * 2.0 * e / static_cast<double>(z.cols());
    }
    const Tensor dx = head.backward(cache, dz);
    if (dtokens) *dtokens = cls_grad(dx, tokens.rows());
    return loss / static_cast<double>(z.cols());
  };
}

SampleLoss forecast_objective(ForecastHead& head, const std::vector<double>& delta_days,
                              const std::vector<int>& outcomes) {
  return [&head, &delta_days, &outcomes](std::size_t i, const Tensor& tokens, double w,
                                         Tensor* dtokens) {
    const Tensor x = ForecastHead::make_input(tokens.row(0), delta_days.at(i));
    const double z = head.logits(x)[0];
    const double y = outcomes.at(i) ? 1.0 : 0.0;
    const double p = sigmoid(z);
    // Stable BCE with logits.
    const double loss = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    Tensor dz(1, 1, w * (p - y));
    const Tensor dx = head.linear.backward(x, dz);
    if (dtokens) {
      *dtokens = Tensor(tokens.rows(), tokens.cols());
      std::copy(dx.data(), dx.data() + tokens.cols(), dtokens->data());
    }
    return loss;
  };
}

}  // namespace vfm
