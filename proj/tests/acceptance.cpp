// Acceptance suite: one PASS/FAIL line per criterion. Run with criterion
// numbers as arguments to select a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "support.hpp"
#include "vfm/adaptation.hpp"
#include "vfm/decoders.hpp"
#include "vfm/explain.hpp"
#include "vfm/metrics.hpp"
#include "vfm/pretrain.hpp"
#include "vfm/synthetic.hpp"
#include "vfm/train.hpp"

using namespace vfm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [x]");
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

Manifest toy(const ToyDataSpec& spec, const fs::path& dir) { return generate_toy_dataset(spec, dir); }

ToyDataSpec spec_of(Modality m, ToyTask task, int n, int size, double noise, std::uint64_t seed) {
  ToyDataSpec s;
  s.modality = m;
  s.task = task;
  s.n_images = n;
  s.image_size = size;
  s.noise_level = noise;
  s.seed = seed;
  s.patch_size = 8;
  return s;
}

EncoderConfig enc_cfg(int size, int patch, int dim, int depth, int heads = 4) {
  EncoderConfig c;
  c.image_size = size;
  c.patch_size = patch;
  c.embed_dim = dim;
  c.depth = depth;
  c.n_heads = heads;
  return c;
}

double ovr_auc(const std::vector<std::vector<double>>& probs, const std::vector<int>& y, int c) {
  std::vector<double> s;
  std::vector<int> l;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    s.push_back(probs[i][static_cast<std::size_t>(c)]);
    l.push_back(y[i] == c);
  }
  return roc_auc(s, l);
}

// ---- 1 ----------------------------------------------------------------------------

Outcome metric_oracles() {
  Outcome o;
  Rng rng(20240601);
  int auc_exact = 0, ap_exact = 0;
  double ap_worst = 0.0;
  const int cases = 1000;
  for (int t = 0; t < cases; ++t) {
    const auto c = oracle::random_case(rng, 2 + rng.below(199), t % 2 == 0);
    auc_exact += roc_auc(c.scores, c.labels) == oracle::auc(c.scores, c.labels);
    const double ap = pr_curve_and_ap(c.scores, c.labels).ap;
    const double want = oracle::average_precision(c.scores, c.labels);
    ap_exact += ap == want;
    ap_worst = std::max(ap_worst, std::abs(ap - want));
  }
  o.require(auc_exact == cases, "auc exact " + std::to_string(auc_exact) + "/1000");
  // AP sums precision*delta-recall in the same order as the oracle, but
  // the oracle rescans counts per threshold; allow last-bit differences.
  o.require(ap_worst <= 1e-12, "ap bitwise " + std::to_string(ap_exact) + "/1000, max diff " + fmt("%.1e", ap_worst));

  // Dice: hand cases, then a counting oracle on random small masks.
  double worst = 0.0;
  {
    Mask a(4, 4), b(4, 4);
    for (int x = 0; x < 2; ++x)
      for (int y = 0; y < 4; ++y) a.at(y, x) = 1;  // 8 px
    for (int x = 1; x < 4; ++x)
      for (int y = 0; y < 4; ++y) b.at(y, x) = 1;  // 12 px, overlap 4
    worst = std::max(worst, std::abs(dice(a, b, 1) - 8.0 / 20.0));
    worst = std::max(worst, std::abs(dice(a, a, 1) - 1.0));
    worst = std::max(worst, std::abs(dice(Mask(3, 3), Mask(3, 3), 1) - 1.0));
    worst = std::max(worst, std::abs(dice(a, Mask(4, 4), 1) - 0.0));
  }
  for (int t = 0; t < 200; ++t) {
    Mask a(5, 7), b(5, 7);
    for (auto& v : a.labels) v = static_cast<std::uint8_t>(rng.below(3));
    for (auto& v : b.labels) v = static_cast<std::uint8_t>(rng.below(3));
    for (int c = 1; c < 3; ++c) {
      double inter = 0, na = 0, nb = 0;
      for (std::size_t i = 0; i < a.labels.size(); ++i) {
        na += a.labels[i] == c;
        nb += b.labels[i] == c;
        inter += a.labels[i] == c && b.labels[i] == c;
      }
      const double want = na + nb == 0 ? 1.0 : 2 * inter / (na + nb);
      worst = std::max(worst, std::abs(dice(a, b, c) - want));
    }
  }
  o.require(worst <= 1e-12, "dice " + fmt("%.1e", worst));

  // F1: tp=3 fp=1 fn=2 -> 6/9; all negative -> 0 by convention.
  worst = std::abs(f1(std::vector{1, 1, 1, 1, 0, 0, 0}, std::vector{1, 1, 1, 0, 1, 1, 0}) - 6.0 / 9.0);
  worst = std::max(worst, std::abs(f1(std::vector{0, 0}, std::vector{0, 0}) - 0.0));
  for (int t = 0; t < 200; ++t) {
    std::vector<int> p(30), y(30);
    double tp = 0, fp = 0, fn = 0;
    for (int i = 0; i < 30; ++i) {
      p[i] = rng.bernoulli(0.5);
      y[i] = rng.bernoulli(0.5);
      tp += p[i] && y[i];
      fp += p[i] && !y[i];
      fn += !p[i] && y[i];
    }
    const double want = tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
    worst = std::max(worst, std::abs(f1(p, y) - want));
  }
  o.require(worst <= 1e-12, "f1 " + fmt("%.1e", worst));

  // Landmark error: 3-4-5 and 5-12-13 triangles.
  const LandmarkSet truth{{Point2{0, 0}, Point2{10, 10}, Point2{1, 1}}};
  const LandmarkSet pred{{Point2{3, 4}, Point2{15, 22}, Point2{1, 1}}};
  const LandmarkError e = landmark_error(pred, truth);
  worst = std::max({std::abs(e.per_point[0] - 5.0), std::abs(e.per_point[1] - 13.0), std::abs(e.per_point[2]),
                    std::abs(e.mean - 6.0)});
  o.require(worst <= 1e-12, "landmark " + fmt("%.1e", worst));
  return o;
}

// ---- 2 ----------------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  const EncoderConfig c = testing::tiny_encoder_config();
  const Image img = testing::random_image(c.image_size, 1, 4);
  struct Check {
    std::string name;
    std::function<testing::GradCheckReport(double)> run;
  };
  std::vector<Check> checks;
  checks.push_back({"encoder", [&](double h) {
                      Encoder enc(c, Modality::FUNDUS, 11);
                      const Tensor tokens = patchify(img, c.patch_size);
                      Rng rng(77);
                      Tensor w(static_cast<std::size_t>(c.grid() * c.grid() + 1), static_cast<std::size_t>(c.embed_dim));
                      for (double& v : w.values()) v = rng.normal();
                      auto loss = [&] {
                        const Tensor out = enc.forward(tokens);
                        double s = 0.0;
                        for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * w[i];
                        return s;
                      };
                      auto analytic = [&] {
                        nn::zero_grads(enc.params());
                        EncoderCache cache;
                        const Tensor out = enc.forward(tokens, &cache);
                        Tensor dout(out.shape());
                        for (std::size_t i = 0; i < out.size(); ++i) dout[i] = w[i];
                        enc.backward(cache, dout);
                      };
                      return testing::grad_check(enc.params(), loss, analytic, h);
                    }});
  checks.push_back({"classifier", [&](double h) {
                      Encoder enc(c, Modality::FUNDUS, 1);
                      ClassifierHead head(c.embed_dim, default_class_names(3), 8, 2);
                      const std::vector<int> y{2};
                      return testing::sample_grad_check(enc, head.params(), classifier_objective(head, y), img, h);
                    }});
  checks.push_back({"segmenter", [&](double h) {
                      Encoder enc(c, Modality::FUNDUS, 1);
                      SegmenterHead head(c.embed_dim, c.patch_size, c.grid(), 2, 0, 3);
                      Mask m(c.image_size, c.image_size);
                      Rng rng(1);
                      for (auto& v : m.labels) v = static_cast<std::uint8_t>(rng.below(2));
                      const std::vector<Mask> masks{m};
                      return testing::sample_grad_check(enc, head.params(), segmenter_objective(head, masks), img, h);
                    }});
  checks.push_back({"landmark", [&](double h) {
                      Encoder enc(c, Modality::UBM, 1);
                      LandmarkHead head(c.embed_dim, c.patch_size, c.grid(), 0, 4);
                      const std::vector<LandmarkSet> t{LandmarkSet{{Point2{1, 2}, Point2{6, 5}, Point2{3, 7}}}};
                      return testing::sample_grad_check(enc, head.params(), landmark_objective(head, t), img, h);
                    }});
  checks.push_back({"regressor", [&](double h) {
                      Encoder enc(c, Modality::FUNDUS, 1);
                      RegressorHead head(c.embed_dim, default_panel_spec(), 8, 5);
                      std::vector<std::vector<double>> t(1, std::vector<double>(head.names.size()));
                      Rng rng(1);
                      for (double& v : t[0]) v = rng.normal();
                      return testing::sample_grad_check(enc, head.params(), regressor_objective(head, t), img, h);
                    }});
  checks.push_back({"forecast", [&](double h) {
                      Encoder enc(c, Modality::FUNDUS, 1);
                      ForecastHead head(c.embed_dim, 6);
                      const std::vector<double> dt{730.0};
                      const std::vector<int> y{1};
                      return testing::sample_grad_check(enc, head.params(), forecast_objective(head, dt, y), img, h);
                    }});
  for (const auto& ch : checks) {
    const auto r3 = ch.run(1e-3);
    const auto r4 = ch.run(1e-4);
    o.require(r3.max_rel_error < 1e-4, ch.name + " " + fmt("%.2e", r3.max_rel_error) + " (h=1e-4: " +
                                           fmt("%.2e", r4.max_rel_error) + ")");
    if (r3.max_rel_error >= 1e-4) std::printf("    worst %s: %s\n", ch.name.c_str(), r3.worst_param.c_str());
  }
  return o;
}

// ---- 3 and 10 share the pretraining run ---------------------------------------------

struct PretrainFixture {
  testing::TempDir dir{"acc_pretrain"};
  Manifest manifest;
  EncoderConfig ec = enc_cfg(64, 8, 32, 2);
  SelfDistillConfig cfg;
  std::optional<PretrainResult> result;

  PretrainFixture() {
    ToyDataSpec s = spec_of(Modality::FUNDUS, ToyTask::CLASSIFY, 200, 64, 0.2, 41);
    s.class_count = 3;
    manifest = toy(s, dir / "data");
    cfg.steps = 200;
    cfg.batch_size = 8;
    cfg.proj_dim = 64;
    cfg.lr = 1e-3;
    cfg.ema_momentum = 0.99;
    cfg.checkpoint_every = 50;
    cfg.seed = 1;
  }
  const PretrainResult& run() {
    if (!result) result = pretrain(manifest, ec, cfg, dir / "run");
    return *result;
  }
};

PretrainFixture& pretrain_fixture() {
  static PretrainFixture f;
  return f;
}

Outcome self_distillation() {
  Outcome o;
  PretrainFixture& f = pretrain_fixture();
  const PretrainResult& r = f.run();
  const auto& h = r.state.loss_history;
  const double first = mean_of(std::span<const double>(h.data(), 20));
  const double last = mean_of(std::span<const double>(h.data() + h.size() - 20, 20));
  o.require(last < first, "loss first20 " + fmt("%.4f", first) + " -> last20 " + fmt("%.4f", last));
  std::vector<Image> probe;
  for (int i = 0; i < 64; ++i) probe.push_back(f.manifest.load_image(f.manifest.records[static_cast<std::size_t>(i)]));
  const double std_on = projection_std(r.state, probe, f.cfg);
  o.require(std_on > 1e-3, "projection std " + fmt("%.2e", std_on));

  // Collapse demonstration: constant images, centering off vs on. Batch
  // norm in the head is disabled in both arms so centering is the only
  // difference.
  const EncoderConfig ec = enc_cfg(32, 8, 32, 1);
  std::vector<Image> ims;
  std::vector<std::string> keys;
  for (int i = 0; i < 64; ++i) {
    ims.emplace_back(32, 32, 1, 0.05 + 0.9 * i / 63.0);
    keys.push_back("c" + std::to_string(i));
  }
  double stds[2];
  for (int centering = 0; centering < 2; ++centering) {
    SelfDistillConfig cfg;
    cfg.proj_dim = 64;
    cfg.steps = 200;
    cfg.teacher_temp = 0.01;
    cfg.centering = centering;
    cfg.lr = 1e-3;
    cfg.batch_size = 8;
    cfg.head_batchnorm = false;
    const auto res = pretrain_images(ims, keys, Modality::FUNDUS, ec, cfg);
    stds[centering] = projection_std(res.state, ims, cfg);
  }
  o.require(stds[0] < 1e-4, "no-centering std " + fmt("%.2e", stds[0]));
  o.detail += " (centering on: " + fmt("%.2e", stds[1]) + ")";
  return o;
}

// ---- 4 ----------------------------------------------------------------------------

Outcome modality_agnostic() {
  Outcome o;
  testing::TempDir dir("acc_cls");
  const Modality mods[3] = {Modality::FUNDUS, Modality::OCT, Modality::SLIT_LAMP};
  std::vector<Image> tr, te;
  std::vector<std::size_t> otr, ote;
  std::vector<int> ytr, yte;
  std::vector<Encoder> encs;
  const EncoderConfig ec = enc_cfg(64, 8, 32, 2);
  for (int mi = 0; mi < 3; ++mi) {
    ToyDataSpec s = spec_of(mods[mi], ToyTask::CLASSIFY, 150, 64, 0.3, 11 + static_cast<std::uint64_t>(mi));
    s.class_count = 3;
    const Manifest m = toy(s, dir / ("m" + std::to_string(mi)));
    encs.emplace_back(ec, mods[mi], 100 + static_cast<std::uint64_t>(mi));
    for (std::size_t i = 0; i < m.records.size(); ++i) {
      const int y = m.records[i].labels->class_index;
      if (i < m.records.size() * 2 / 3) {
        tr.push_back(m.load_image(m.records[i])), otr.push_back(static_cast<std::size_t>(mi)), ytr.push_back(y);
      } else {
        te.push_back(m.load_image(m.records[i])), ote.push_back(static_cast<std::size_t>(mi)), yte.push_back(y);
      }
    }
  }
  std::vector<Encoder*> ep;
  for (auto& e : encs) ep.push_back(&e);
  ClassifierHead head(ec.embed_dim, default_class_names(3), 0, 7);
  TrainOptions opt;
  opt.steps = 400;
  opt.lr = 2e-3;
  opt.batch_size = 12;
  opt.finetune_encoder = true;
  opt.encoder_lr = 1e-3;
  opt.cosine_decay = true;
  train_head_multi(ep, otr, tr, head.params(), classifier_objective(head, ytr), opt);

  // One evaluation batch per modality; the digest is taken around each.
  std::set<std::string> digests{head.digest()};
  std::vector<std::vector<double>> probs(te.size());
  for (std::size_t mi = 0; mi < 3; ++mi) {
    for (std::size_t i = 0; i < te.size(); ++i) {
      if (ote[i] == mi) probs[i] = head.classify(encs[mi].encode(te[i]));
    }
    digests.insert(head.digest());
  }
  o.require(digests.size() == 1, "digest identical across 3 modality batches");
  for (int c = 0; c < 3; ++c) {
    const double a = ovr_auc(probs, yte, c);
    o.require(a >= 0.90, "auc_" + head.label_space[static_cast<std::size_t>(c)] + " " + fmt("%.3f", a));
  }
  return o;
}

// ---- 5 ----------------------------------------------------------------------------

Outcome probing() {
  Outcome o;
  testing::TempDir dir("acc_probe");
  ToyDataSpec s = spec_of(Modality::FUNDUS, ToyTask::CLASSIFY, 120, 64, 0.1, 51);
  s.class_count = 2;
  const Manifest m = toy(s, dir / "data");
  const Encoder enc(enc_cfg(64, 8, 32, 2), Modality::FUNDUS, 5);
  const std::string before = enc.digest();
  ProbeConfig pc;
  pc.episodes = 5;
  const ProbeResult r = probe_encoder(enc, m, pc, std::nullopt, FeaturePooling::MEAN_PATCH);
  o.require(before == enc.digest() && r.encoder_digest_before == r.encoder_digest_after, "encoder digest unchanged");
  o.require(r.auc_mean >= 0.95, "separable auc " + fmt("%.3f", r.auc_mean));

  const FeatureTable t = extract_features(enc, m, std::nullopt, FeaturePooling::MEAN_PATCH);
  std::vector<int> shuffled = t.labels;
  Rng rng = Rng::keyed(7, "label_shuffle");
  rng.shuffle(shuffled);
  const ProbeResult null = linear_probe(t.features, shuffled, pc);
  o.require(null.auc_mean >= 0.35 && null.auc_mean <= 0.65,
            "shuffled auc " + fmt("%.3f", null.auc_mean) + " +- " + fmt("%.3f", null.auc_std));
  o.require(before == enc.digest(), "digest unchanged after linear_probe");
  return o;
}

// ---- 6 ----------------------------------------------------------------------------

Outcome few_shot() {
  Outcome o;
  testing::TempDir dir("acc_fewshot");
  ToyDataSpec s = spec_of(Modality::FUNDUS, ToyTask::CLASSIFY, 160, 64, 0.3, 11);
  s.class_count = 2;
  s.class_names = {"NORMAL", "RARE_DISEASE"};
  Manifest m = toy(s, dir / "data");
  // Keep 24 examples of the disease class so it is a minority (24 of ~104).
  int kept = 0;
  std::erase_if(m.records, [&](const ImageRecord& r) { return r.labels->class_index == 1 && ++kept > 24; });
  const Encoder enc(enc_cfg(64, 8, 32, 2), Modality::FUNDUS, 5);
  const FeatureTable t = extract_features(enc, m, std::nullopt, FeaturePooling::MEAN_PATCH);
  std::vector<double> mean, sd;
  for (int k : {1, 5, 10}) {
    ProbeConfig pc;
    pc.k_shot = k;
    pc.episodes = 5;
    const ProbeResult r = linear_probe(t.features, t.labels, pc);
    mean.push_back(r.auc_mean);
    sd.push_back(r.auc_std);
    o.detail += (o.detail.empty() ? "" : ", ") + ("k=" + std::to_string(k) + " " + fmt("%.3f", r.auc_mean) + " +- " +
                                                  fmt("%.3f", r.auc_std));
  }
  // A drop between consecutive k is tolerated up to the larger of the two stds.
  for (std::size_t i = 0; i + 1 < mean.size(); ++i) {
    const bool ok = mean[i + 1] >= mean[i] - std::max(sd[i], sd[i + 1]);
    o.pass = o.pass && ok;
  }
  o.detail += o.pass ? "; non-decreasing within 1 sd" : "; decreases beyond 1 sd [x]";
  return o;
}

// ---- 7 ----------------------------------------------------------------------------

Outcome spatial_heads() {
  Outcome o;
  testing::TempDir dir("acc_spatial");
  {
    ToyDataSpec s = spec_of(Modality::FUNDUS, ToyTask::SEGMENT_VESSEL, 80, 64, 0.1, 3);
    const Manifest m = toy(s, dir / "seg");
    std::vector<Image> tr, te;
    std::vector<Mask> mtr, mte;
    for (std::size_t i = 0; i < m.records.size(); ++i) {
      (i < 64 ? tr : te).push_back(m.load_image(m.records[i]));
      (i < 64 ? mtr : mte).push_back(m.load_mask(m.records[i]));
    }
    const EncoderConfig ec = enc_cfg(64, 8, 64, 2);
    Encoder enc(ec, Modality::FUNDUS, 1);
    SegmenterHead head(ec.embed_dim, ec.patch_size, ec.grid(), 2, 0, 2);
    TrainOptions opt;
    opt.steps = 300;
    opt.lr = 2e-3;
    opt.finetune_encoder = true;
    opt.encoder_lr = 1e-3;
    opt.batch_size = 8;
    train_head(enc, tr, head.params(), segmenter_objective(head, mtr, 1.0), opt);
    double d = 0.0, trivial = 0.0;
    for (std::size_t i = 0; i < te.size(); ++i) {
      d += dice(argmax_mask(head.segment(enc.encode(te[i]), ec.image_size)), mte[i], 1);
      trivial += dice(Mask(ec.image_size, ec.image_size), mte[i], 1);
    }
    d /= static_cast<double>(te.size());
    trivial /= static_cast<double>(te.size());
    o.require(d >= 0.70, "vessel dice " + fmt("%.3f", d) + " (all-background " + fmt("%.3f", trivial) + ")");
  }
  {
    ToyDataSpec s = spec_of(Modality::UBM, ToyTask::LANDMARK, 160, 128, 0.1, 5);
    s.patch_size = 16;
    const Manifest m = toy(s, dir / "lm");
    std::vector<Image> tr, te;
    std::vector<LandmarkSet> ltr, lte;
    for (std::size_t i = 0; i < m.records.size(); ++i) {
      (i < 128 ? tr : te).push_back(m.load_image(m.records[i]));
      (i < 128 ? ltr : lte).push_back(*m.records[i].landmarks);
    }
    const EncoderConfig ec = enc_cfg(128, 16, 64, 2);
    Encoder enc(ec, Modality::UBM, 1);
    LandmarkHead head(ec.embed_dim, ec.patch_size, ec.grid(), 0, 2);
    TrainOptions opt;
    opt.steps = 400;
    opt.lr = 2e-3;
    opt.finetune_encoder = true;
    opt.encoder_lr = 1e-3;
    opt.batch_size = 8;
    opt.cosine_decay = true;
    train_head(enc, tr, head.params(), landmark_objective(head, ltr), opt);
    std::vector<LandmarkSet> pred;
    for (const auto& im : te) pred.push_back(head.detect_landmarks(enc.encode(im), ec.image_size));
    const double err = landmark_error(pred, lte).mean;
    o.require(err < 5.0, "landmark error " + fmt("%.2f", err) + " px @128");
  }
  {
    // Delta heatmaps: a single dominant logit at a random pixel.
    Rng rng(9);
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
      const int H = 128, W = 128;
      std::vector<double> hm(H * W, 0.0);
      const int y = static_cast<int>(rng.below(H)), x = static_cast<int>(rng.below(W));
      hm[static_cast<std::size_t>(y * W + x)] = 50.0;
      const Point2 p = soft_argmax(hm, H, W);
      worst = std::max(worst, std::hypot(p.x - x, p.y - y));
    }
    o.require(worst <= 0.5, "delta soft-argmax " + fmt("%.1e", worst) + " px");
  }
  return o;
}

// ---- 8 ----------------------------------------------------------------------------

Outcome forecast_and_regression() {
  Outcome o;
  testing::TempDir dir("acc_fcreg");
  {
    const Manifest m = toy(spec_of(Modality::FUNDUS, ToyTask::FORECAST, 500, 64, 0.1, 31), dir / "fc");
    std::vector<Image> tr, te;
    std::vector<double> dtr, dte;
    std::vector<int> ytr, rule;
    for (std::size_t i = 0; i < m.pairs.size(); ++i) {
      const auto& p = m.pairs[i];
      const ImageRecord& rec = m.find(p.image_t0);
      if (i < m.pairs.size() * 3 / 4) {
        tr.push_back(m.load_image(rec)), dtr.push_back(p.delta_days), ytr.push_back(p.outcome);
      } else {
        te.push_back(m.load_image(rec)), dte.push_back(p.delta_days);
        rule.push_back(rec.toy_params.at("rule_outcome").get<int>());
      }
    }
    const EncoderConfig ec = enc_cfg(64, 8, 32, 2);
    Encoder enc(ec, Modality::FUNDUS, 3);
    ForecastHead head(ec.embed_dim, 4);
    TrainOptions opt;
    opt.steps = 1000;
    opt.lr = 2e-3;
    opt.batch_size = 16;
    opt.finetune_encoder = true;
    opt.encoder_lr = 1e-3;
    opt.cosine_decay = true;
    train_head(enc, tr, head.params(), forecast_objective(head, dtr, ytr), opt);
    std::vector<int> pred;
    for (std::size_t i = 0; i < te.size(); ++i) pred.push_back(head.forecast(enc.encode(te[i]), dte[i]) >= 0.5);
    const double v = f1(pred, rule);
    o.require(v >= 0.85, "forecast f1 vs rule " + fmt("%.3f", v));
  }
  {
    const Manifest m = toy(spec_of(Modality::FUNDUS, ToyTask::BIOMARKER, 300, 64, 0.1, 21), dir / "bio");
    std::vector<Image> tr, te;
    std::vector<BiomarkerPanel> ptr, pte;
    for (std::size_t i = 0; i < m.records.size(); ++i) {
      const bool train = i < m.records.size() * 3 / 4;
      (train ? tr : te).push_back(m.load_image(m.records[i]));
      (train ? ptr : pte).push_back(*m.records[i].biomarkers);
    }
    const EncoderConfig ec = enc_cfg(64, 8, 32, 2);
    Encoder enc(ec, Modality::FUNDUS, 3);
    RegressorHead head(ec.embed_dim, default_panel_spec(), 64, 4);
    head.fit_standardization(ptr);
    std::vector<std::vector<double>> z;
    for (const auto& p : ptr) z.push_back(head.standardize(p));
    TrainOptions opt;
    opt.steps = 1000;
    opt.lr = 2e-3;
    opt.batch_size = 16;
    opt.finetune_encoder = true;
    opt.encoder_lr = 1e-3;
    opt.cosine_decay = true;
    train_head(enc, tr, head.params(), regressor_objective(head, z), opt);
    std::vector<BiomarkerPanel> pred;
    for (const auto& im : te) pred.push_back(head.regress_biomarkers(enc.encode(im)));
    for (const char* name : kNamedBiomarkers) {
      std::vector<double> a, b;
      for (std::size_t i = 0; i < te.size(); ++i) a.push_back(pred[i].values.at(name)), b.push_back(pte[i].values.at(name));
      const double r2 = r_squared(a, b);
      o.require(r2 >= 0.9, std::string("r2_") + name + " " + fmt("%.3f", r2));
    }
  }
  {
    // biomarker_accuracy against hand-counted cases and a counting oracle.
    bool exact = true;
    BiomarkerPanel t, p;
    t.values = {{"A", 10.0}, {"B", -5.0}, {"C", 0.0}};
    p.values = {{"A", 11.9}, {"B", -6.5}, {"C", 0.3}};  // inside, outside (30%), outside abs_tol
    const BiomarkerAccuracy acc = biomarker_accuracy(p, t);
    exact = exact && acc.per_biomarker.at("A") == 1.0 && acc.per_biomarker.at("B") == 0.0 &&
            acc.per_biomarker.at("C") == 0.0 && acc.mean == 1.0 / 3.0;
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<BiomarkerPanel> ps(12), ts(12);
      for (int i = 0; i < 12; ++i) {
        for (const char* name : {"X", "Y"}) {
          const double tv = rng.below(4) == 0 ? 0.0 : rng.normal(5.0, 3.0);
          ts[static_cast<std::size_t>(i)].values[name] = tv;
          ps[static_cast<std::size_t>(i)].values[name] = tv + rng.normal(0.0, 1.0);
        }
      }
      const BiomarkerAccuracy got = biomarker_accuracy(ps, ts);
      std::vector<double> per;
      for (const char* name : {"X", "Y"}) {
        int hits = 0;
        for (int i = 0; i < 12; ++i) {
          const double tv = ts[static_cast<std::size_t>(i)].values.at(name);
          const double pv = ps[static_cast<std::size_t>(i)].values.at(name);
          hits += tv == 0.0 ? std::abs(pv) <= 0.2 : std::abs(pv - tv) <= 0.2 * std::abs(tv);
        }
        per.push_back(hits / 12.0);
        exact = exact && got.per_biomarker.at(name) == hits / 12.0;
      }
      exact = exact && got.mean == (per[0] + per[1]) / 2.0;
    }
    o.require(exact, "biomarker_accuracy oracle cases exact");
  }
  return o;
}

// ---- 9 ----------------------------------------------------------------------------

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome synthetic_sweep() {
  Outcome o;
  testing::TempDir dir("acc_sweep");
  const SweepConfig cfg;
  const SweepRun a = run_ratio_sweep(cfg, dir / "a");
  const SweepRun b = run_ratio_sweep(cfg, dir / "b");
  o.require(a.complete && a.result.rows.size() == 6 && a.cells_computed == 12, "6 ratios x 2 seeds complete");
  bool schema = true;
  try {
    validate_sweep_json(nlohmann::json::parse(file_bytes(dir / "a" / "sweep.json")));
  } catch (const std::exception&) {
    schema = false;
  }
  o.require(schema, "schema valid");
  bool real_end = false, synth_end = false;
  for (const auto& r : a.result.rows) {
    real_end = real_end || (r.synth_part == 0 && r.n_synth == 0);
    synth_end = synth_end || (r.real_part == 0 && r.n_real == 0);
  }
  o.require(real_end && synth_end, "both endpoints present");
  o.require(file_bytes(dir / "a" / "sweep.json") == file_bytes(dir / "b" / "sweep.json") &&
                file_bytes(dir / "a" / "sweep.csv") == file_bytes(dir / "b" / "sweep.csv"),
            "byte-reproducible");
  std::string table;
  for (const auto& r : a.result.rows) table += " " + r.ratio_label() + "=" + fmt("%.3f", r.metric_mean);
  o.detail += "; best " + a.result.best().ratio_label() + " (reported only);" + table;
  return o;
}

// ---- 10 ---------------------------------------------------------------------------

Outcome explainability() {
  Outcome o;
  PretrainFixture& f = pretrain_fixture();
  const PretrainResult& r = f.run();
  testing::TempDir dir("acc_explain");
  const Manifest seg = toy(spec_of(Modality::FUNDUS, ToyTask::SEGMENT_VESSEL, 4, 64, 0.1, 61), dir / "seg");
  const Image img = seg.load_image(seg.records[0]);
  const Mask mask = seg.load_mask(seg.records[0]);

  const Encoder enc = Encoder::load(*r.final_checkpoint);
  double row_err = 0.0;
  for (int layer = 0; layer < enc.config().depth; ++layer) {
    const Tensor attn = enc.attention_maps(img, layer);
    const std::size_t H = attn.shape()[0], T = attn.shape()[1];
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t i = 0; i < T; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < T; ++j) s += attn.at3(h, i, j);
        row_err = std::max(row_err, std::abs(s - 1.0));
      }
  }
  o.require(row_err <= 1e-5, "attention rows sum to 1 (max err " + fmt("%.1e", row_err) + ")");

  const AttentionMapSet maps = head_attention(enc, img);
  const std::size_t N = maps.merged.size();
  double merge_err = 0.0;
  for (std::size_t p = 0; p < N; ++p) {
    double m = 0.0;
    for (int h = 0; h < maps.heads(); ++h) m += maps.per_head[static_cast<std::size_t>(h) * N + p];
    merge_err = std::max(merge_err, std::abs(maps.merged[p] - m / maps.heads()));
  }
  o.require(merge_err <= 1e-12, "merged = head mean (" + fmt("%.1e", merge_err) + ")");

  const auto evo = attention_evolution(r.checkpoint_paths, img, -1, MergeMode::MEAN, seg.records[0].id);
  const std::vector<bool> fg = foreground_patches(mask, enc.config().patch_size);
  std::vector<double> mass;
  for (const auto& a : evo) mass.push_back(foreground_mass(a, fg));
  write_evolution_csv(dir / "evolution.csv", evo, mass);
  std::ifstream csv(dir / "evolution.csv");
  std::string line;
  std::getline(csv, line);
  std::vector<long long> steps;
  while (std::getline(csv, line)) steps.push_back(std::stoll(line.substr(0, line.find(','))));
  const bool monotone = std::adjacent_find(steps.begin(), steps.end(), std::greater_equal<>()) == steps.end();
  o.require(steps.size() >= 4 && monotone, "evolution csv " + std::to_string(steps.size()) + " checkpoints, increasing steps");
  return o;
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion all[] = {
      {1, "metric-oracle equivalence", 60, metric_oracles},
      {2, "gradient fidelity", 120, gradients},
      {3, "self-distillation behavior", 300, self_distillation},
      {4, "modality-agnostic decoder", 300, modality_agnostic},
      {5, "probing protocol", 120, probing},
      {6, "few-shot trend", 180, few_shot},
      {7, "spatial heads", 480, spatial_heads},
      {8, "forecast and regression heads", 240, forecast_and_regression},
      {9, "synthetic sweep harness", 900, synthetic_sweep},
      {10, "explainability", 120, explainability},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("%s criterion %d (%s) [%.1fs / %.0fs%s]: %s\n", pass ? "PASS" : "FAIL", c.id, c.name, secs, c.budget_s,
                in_time ? "" : " over budget", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
