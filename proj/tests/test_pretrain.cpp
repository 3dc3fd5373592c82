#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <utility>

#include "support.hpp"
#include "vfm/error.hpp"
#include "vfm/pretrain.hpp"

using namespace vfm;

namespace {

// Straight-line softmax + cross-entropy for one row.
double scalar_distill(const std::vector<double>& s, const std::vector<double>& t,
                      const std::vector<double>& c, double ts, double tt) {
  double tmax = -1e300, smax = -1e300;
  for (std::size_t k = 0; k < t.size(); ++k) tmax = std::max(tmax, (t[k] - c[k]) / tt);
  for (double v : s) smax = std::max(smax, v / ts);
  double tz = 0, sz = 0;
  for (std::size_t k = 0; k < t.size(); ++k) tz += std::exp((t[k] - c[k]) / tt - tmax);
  for (double v : s) sz += std::exp(v / ts - smax);
  double loss = 0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double p = std::exp((t[k] - c[k]) / tt - tmax) / tz;
    const double logq = s[k] / ts - smax - std::log(sz);
    loss -= p * logq;
  }
  return loss;
}

Tensor row_tensor(std::initializer_list<double> v) {
  Tensor t(1, v.size());
  std::size_t i = 0;
  for (double x : v) t[i++] = x;
  return t;
}

SelfDistillConfig small_cfg() {
  SelfDistillConfig c;
  c.proj_dim = 16;
  c.proj_hidden = 16;
  c.n_local_crops = 2;
  c.batch_size = 2;
  c.steps = 4;
  c.seed = 3;
  return c;
}

std::vector<Image> images(int n, int size, std::uint64_t seed) {
  std::vector<Image> out;
  for (int i = 0; i < n; ++i) out.push_back(testing::random_image(size, 1, seed + i));
  return out;
}

std::vector<std::string> keys(std::size_t n) {
  std::vector<std::string> k;
  for (std::size_t i = 0; i < n; ++i) k.push_back("img" + std::to_string(i));
  return k;
}

}  // namespace

TEST_CASE("distillation loss examples") {
  const std::vector<double> zero{0.0, 0.0};
  CHECK(distillation_loss(row_tensor({0, 0}), row_tensor({0, 0}), zero, 0.1, 0.04) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const double oracle = scalar_distill({10, 0}, {10, 0}, zero, 0.1, 0.04);
  CHECK(std::abs(distillation_loss(row_tensor({10, 0}), row_tensor({10, 0}), zero, 0.1, 0.04) -
                 oracle) <= 1e-10);
  const std::vector<double> c{3.0, -1.0, 0.5};
  CHECK(distillation_loss(row_tensor({0, 0, 0}), row_tensor({3, -1, 0.5}), c, 0.1, 0.04) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK_THROWS_AS(distillation_loss(row_tensor({0, 0}), row_tensor({0, 0, 0}), zero, 0.1, 0.04),
                  Error);
}

TEST_CASE("distillation loss matches the oracle and bounds the teacher entropy") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t B = 1 + rng.below(4), K = 2 + rng.below(8);
    Tensor s(B, K), t(B, K);
    for (double& v : s.values()) v = rng.normal() * 3;
    for (double& v : t.values()) v = rng.normal() * 3;
    std::vector<double> c(K);
    for (double& v : c) v = rng.normal();
    const double ts = 0.05 + rng.uniform() * 0.2, tt = ts * (0.1 + 0.8 * rng.uniform());
    double expect = 0;
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<double> sr(s.row(b).begin(), s.row(b).end()), tr(t.row(b).begin(), t.row(b).end());
      expect += scalar_distill(sr, tr, c, ts, tt) / static_cast<double>(B);
    }
    const double got = distillation_loss(s, t, c, ts, tt);
    CHECK(std::abs(got - expect) <= 1e-9 * std::max(1.0, std::abs(expect)));
    CHECK(got >= teacher_entropy(t, c, tt) - 1e-12);
  }
}

TEST_CASE("distillation gradient matches finite differences") {
  Rng rng(6);
  Tensor s(3, 5), t(3, 5);
  for (double& v : s.values()) v = rng.normal();
  for (double& v : t.values()) v = rng.normal();
  const std::vector<double> c(5, 0.1);
  const DistillLoss l = distillation_loss_with_grad(s, t, c, 0.1, 0.04);
  for (std::size_t i = 0; i < s.size(); ++i) {
    Tensor up = s, down = s;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double num = (distillation_loss(up, t, c, 0.1, 0.04) - distillation_loss(down, t, c, 0.1, 0.04)) / 2e-6;
    CHECK(std::abs(num - l.dstudent[i]) <= 1e-6);
  }
}

TEST_CASE("ema and center updates") {
  Tensor t(1, 3, 0.0), s(1, 3, 2.0);
  Tensor a = t;
  ema_update(a, s, 1.0);
  CHECK(a[0] == 0.0);
  ema_update(a, s, 0.0);
  CHECK(a[2] == 2.0);
  Tensor b = t;
  ema_update(b, s, 0.5);
  CHECK(b[1] == 1.0);
  CHECK_THROWS_AS(ema_update(b, Tensor(1, 2, 0.0), 0.5), Error);

  std::vector<double> c{0, 2};
  const std::vector<double> mean{2, 0};
  center_update(c, mean, 1.0);
  CHECK(c == std::vector<double>{0, 2});
  center_update(c, mean, 0.5);
  CHECK(c == std::vector<double>{1, 1});
  center_update(c, mean, 0.0);
  CHECK(c == mean);
  CHECK_THROWS_AS(center_update(c, std::vector<double>{1}, 0.5), Error);
}

TEST_CASE("multi-crop counts, geometry and determinism") {
  const Image img = testing::random_image(32, 1, 1);
  SelfDistillConfig cfg;
  Rng r1(9), r2(9);
  const MultiCrop a = multi_crop(img, cfg, r1, 16);
  const MultiCrop b = multi_crop(img, cfg, r2, 16);
  CHECK(a.global.size() + a.local.size() == 6);
  for (const auto& g : a.global_boxes) {
    for (const auto& l : a.local_boxes) CHECK(l.side < g.side);
  }
  for (std::size_t i = 0; i < a.global.size(); ++i) {
    CHECK(a.global_boxes[i].x0 == b.global_boxes[i].x0);
    CHECK(a.global[i].pixels == b.global[i].pixels);
    CHECK(a.global[i].height == 16);
  }
  cfg.global_crop_frac = 1.0;
  Rng r3(1);
  const MultiCrop full = multi_crop(img, cfg, r3, 32);
  for (const auto& g : full.global) {
    for (std::size_t i = 0; i < g.pixels.size(); ++i) CHECK(g.pixels[i] == doctest::Approx(img.pixels[i]));
  }
  cfg.global_crop_frac = 1.5;
  CHECK_THROWS_AS(multi_crop(img, cfg, r3, 16), Error);
}

TEST_CASE("projection head gradients with and without batch norm") {
  for (bool bn : {true, false}) {
    Rng rng(2);
    ProjectionHead head(6, 8, 5, bn, rng);
    Tensor x(4, 6), w(4, 5);
    for (double& v : x.values()) v = rng.normal();
    for (double& v : w.values()) v = rng.normal();
    auto loss = [&] {
      const Tensor y = head.forward(x);
      double l = 0;
      for (std::size_t i = 0; i < y.size(); ++i) l += w[i] * y[i] + 0.5 * y[i] * y[i];
      return l;
    };
    Tensor dx;
    auto analytic = [&] {
      nn::zero_grads(head.params());
      ProjectionHead::Cache cache;
      const Tensor y = head.forward(x, &cache);
      Tensor dy(y.shape());
      for (std::size_t i = 0; i < y.size(); ++i) dy[i] = w[i] + y[i];
      dx = head.backward(cache, dy);
    };
    const auto rep = testing::grad_check(head.params(), loss, analytic, 1e-5);
    INFO("batchnorm=" << bn << " " << rep.worst_param);
    CHECK(rep.max_rel_error < 1e-5);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + 1e-5;
      const double up = loss();
      x[i] = orig - 1e-5;
      const double down = loss();
      x[i] = orig;
      CHECK(std::abs((up - down) / 2e-5 - dx[i]) <= 1e-6 * std::max(1.0, std::abs(dx[i])));
    }
  }
  Rng rng(3);
  ProjectionHead head(4, 4, 4, true, rng);
  CHECK_THROWS_AS(head.forward(Tensor(1, 4, 0.5)), Error);
}

TEST_CASE("teacher moves only by the EMA formula") {
  const SelfDistillConfig cfg = small_cfg();
  PretrainState st = init_pretrain_state(testing::tiny_encoder_config(), Modality::FUNDUS, cfg);
  nn::ParamRefs trainable = st.student.params();
  auto head = st.student_head.params();
  trainable.insert(trainable.end(), head.begin(), head.end());
  nn::AdamConfig ac;
  ac.lr = 1e-2;
  ac.beta1 = 0.0;
  nn::Adam opt(trainable, ac);
  const auto imgs = images(2, 8, 1);
  const std::vector<const Image*> batch{&imgs[0], &imgs[1]};
  for (int s = 0; s < 3; ++s) {
    std::vector<Tensor> before;
    for (const nn::Param* p : std::as_const(st.teacher).params()) before.push_back(p->value);
    for (const nn::Param* p : std::as_const(st.teacher_head).params()) before.push_back(p->value);
    pretrain_step(st, opt, batch, keys(2), cfg);
    nn::ConstParamRefs student = std::as_const(st.student).params();
    auto sh = std::as_const(st.student_head).params();
    student.insert(student.end(), sh.begin(), sh.end());
    nn::ConstParamRefs teacher = std::as_const(st.teacher).params();
    auto th = std::as_const(st.teacher_head).params();
    teacher.insert(teacher.end(), th.begin(), th.end());
    REQUIRE(teacher.size() == before.size());
    bool exact = true;
    for (std::size_t i = 0; i < teacher.size(); ++i) {
      for (std::size_t j = 0; j < before[i].size(); ++j) {
        const double m = cfg.ema_momentum;
        exact = exact && teacher[i]->value[j] == m * before[i][j] + (1 - m) * student[i]->value[j];
      }
    }
    CHECK(exact);
  }
}

TEST_CASE("pretraining is seed-deterministic and writes the checkpoint series") {
  SelfDistillConfig cfg = small_cfg();
  cfg.steps = 8;
  cfg.checkpoint_every = 2;
  const auto imgs = images(6, 8, 20);
  testing::TempDir dir("pretrain");
  const PretrainResult a = pretrain_images(imgs, keys(6), Modality::OCT,
                                           testing::tiny_encoder_config(), cfg, dir.path());
  const PretrainResult b = pretrain_images(imgs, keys(6), Modality::OCT,
                                           testing::tiny_encoder_config(), cfg);
  CHECK(a.state.loss_history == b.state.loss_history);
  CHECK(a.state.teacher.digest() == b.state.teacher.digest());
  CHECK(a.checkpoint_steps == std::vector<long long>{2, 4, 6, 8});
  CHECK(a.checkpoint_paths.size() == 4);
  REQUIRE(a.final_checkpoint);
  CHECK(std::filesystem::exists(*a.final_checkpoint));
  std::ifstream csv(dir / "loss_history.csv");
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 9);
  CHECK(Encoder::load(a.checkpoint_paths[3]).digest() != Encoder::load(a.checkpoint_paths[0]).digest());

  cfg.seed = 4;
  const PretrainResult c = pretrain_images(imgs, keys(6), Modality::OCT,
                                           testing::tiny_encoder_config(), cfg);
  CHECK(c.state.loss_history != a.state.loss_history);
}

TEST_CASE("config validation") {
  SelfDistillConfig c;
  c.teacher_temp = 0.2;
  CHECK_THROWS_AS(c.validate(), Error);
  c = SelfDistillConfig{};
  c.ema_momentum = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = SelfDistillConfig{};
  c.local_crop_frac = 0.8;
  CHECK_THROWS_AS(c.validate(), Error);
  c = SelfDistillConfig{};
  const SelfDistillConfig back = self_distill_config_from_json(self_distill_config_to_json(c));
  CHECK(self_distill_config_to_json(back) == self_distill_config_to_json(c));
  CHECK_THROWS_AS(pretrain_images({}, {}, Modality::OCT, testing::tiny_encoder_config(), c), Error);
}

TEST_CASE("centering prevents collapse on constant images") {
  EncoderConfig ec;
  ec.image_size = 32;
  ec.patch_size = 8;
  ec.embed_dim = 32;
  ec.depth = 1;
  ec.n_heads = 4;
  SelfDistillConfig cfg;
  cfg.head_batchnorm = false;
  cfg.teacher_temp = 0.01;
  cfg.proj_dim = 64;
  cfg.lr = 1e-3;
  cfg.steps = 200;
  cfg.seed = 1;
  std::vector<Image> constant;
  Rng rng(77);
  for (int i = 0; i < 64; ++i) {
    Image img(32, 32, 1);
    std::fill(img.pixels.begin(), img.pixels.end(), rng.uniform());
    constant.push_back(img);
  }
  cfg.centering = false;
  const auto off = pretrain_images(constant, keys(64), Modality::FUNDUS, ec, cfg);
  cfg.centering = true;
  const auto on = pretrain_images(constant, keys(64), Modality::FUNDUS, ec, cfg);
  const double std_off = projection_std(off.state, constant, cfg);
  const double std_on = projection_std(on.state, constant, cfg);
  INFO("off " << std_off << " on " << std_on);
  CHECK(std_off < 1e-4);
  CHECK(std_on > 1e-3);
}
