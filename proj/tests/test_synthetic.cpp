#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <iterator>
#include <set>

#include "support.hpp"
#include "vfm/digest.hpp"
#include "vfm/error.hpp"
#include "vfm/synthetic.hpp"

using namespace vfm;

namespace {

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Manifest toy(const std::filesystem::path& dir, int n, int size = 16, std::uint64_t seed = 3) {
  ToyDataSpec s;
  s.n_images = n;
  s.image_size = size;
  s.patch_size = 8;
  s.class_count = 3;
  s.seed = seed;
  return generate_toy_dataset(s, dir);
}

GeneratorConfig small_gen() {
  GeneratorConfig g;
  g.image_size = 16;
  g.hidden = 32;
  g.latent_dim = 4;
  g.steps = 40;
  return g;
}

// Cheapest configuration that still runs every stage of the sweep.
SweepConfig tiny_sweep() {
  SweepConfig c;
  c.seeds = {0, 1, 2};
  c.real_data.n_images = 32;
  c.real_data.image_size = 16;
  c.downstream_data.n_images = 24;
  c.downstream_data.image_size = 16;
  c.encoder.image_size = 16;
  c.encoder.embed_dim = 8;
  c.encoder.n_heads = 2;
  c.pretrain.steps = 2;
  c.pretrain.batch_size = 2;
  c.pretrain.proj_dim = 8;
  c.generator = small_gen();
  c.generator.steps = 5;
  c.probe.episodes = 2;
  c.probe.steps = 20;
  return c;
}

}  // namespace

TEST_CASE("generator gradients match finite differences") {
  GeneratorConfig cfg = small_gen();
  cfg.image_size = 4;
  cfg.kl_weight = 0.3;
  GeneratorState g(cfg, 1, {"A", "B"}, Modality::FUNDUS);
  const Image img = testing::random_image(4, 1, 2);
  const std::vector<double> eps{0.3, -1.1, 0.7, 0.2};
  auto loss = [&] { return g.loss(img, 1, eps); };
  auto analytic = [&] {
    nn::zero_grads(g.params());
    g.loss_and_grad(img, 1, eps);
  };
  const auto rep = testing::grad_check(g.params(), loss, analytic, 1e-5);
  INFO(rep.worst_param);
  CHECK(rep.max_rel_error < 1e-5);
}

TEST_CASE("generator training lowers the loss and samples deterministically") {
  testing::TempDir dir("gen");
  const Manifest m = toy(dir / "data", 200);
  GeneratorConfig cfg = small_gen();
  cfg.steps = 500;
  const GeneratorState g = fit_generator(m, cfg);
  const auto& h = g.loss_history;
  REQUIRE(h.size() == 500);
  double first = 0, last = 0;
  for (int i = 0; i < 50; ++i) first += h[static_cast<std::size_t>(i)], last += h[h.size() - 1 - static_cast<std::size_t>(i)];
  CHECK(last < first);

  Rng a(4), b(4);
  const Image s1 = g.sample(1, a), s2 = g.sample(1, b);
  CHECK(s1.height == 16);
  CHECK(s1.width == 16);
  CHECK(s1 == s2);

  g.save(dir / "gen.ckpt");
  const GeneratorState back = GeneratorState::load(dir / "gen.ckpt");
  CHECK(back.digest() == g.digest());
  CHECK(back.class_names == g.class_names);
}

TEST_CASE("generator needs 32 images") {
  std::vector<Image> imgs(31, testing::random_image(16, 1, 1));
  try {
    fit_generator_images(imgs, std::vector<int>(31, 0), {"A"}, Modality::FUNDUS, small_gen());
    FAIL("expected TooFewImages");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TooFewImages);
  }
}

TEST_CASE("synthetic samples are tagged, conditioned and seed-distinct") {
  testing::TempDir dir("samples");
  std::vector<Image> imgs;
  for (int i = 0; i < 32; ++i) imgs.push_back(testing::random_image(16, 1, static_cast<std::uint64_t>(i)));
  std::vector<int> labels;
  for (int i = 0; i < 32; ++i) labels.push_back(i % 3);
  const GeneratorState g = fit_generator_images(imgs, labels, {"NORMAL", "DR", "AMD"}, Modality::SLIT_LAMP, small_gen());

  const Manifest a = sample_synthetic(g, 50, 1, dir / "a");
  CHECK(a.records.size() == 50);
  for (const auto& r : a.records) {
    CHECK(r.synthetic);
    CHECK(r.modality == Modality::SLIT_LAMP);
  }
  const Manifest reloaded = load_manifest(dir / "a" / "manifest.jsonl");
  CHECK(reloaded.records == a.records);

  const Manifest c2 = sample_synthetic(g, 10, 2, dir / "c2", 2);
  for (const auto& r : c2.records) CHECK(r.labels->class_index == 2);
  for (const auto& r : c2.records) CHECK(r.labels->class_name == "AMD");

  std::set<std::string> hashes;
  for (const auto& r : a.records) hashes.insert(sha256_hex(file_bytes(a.resolve(r.image_path))));
  const Manifest b = sample_synthetic(g, 50, 3, dir / "b");
  for (const auto& r : b.records) CHECK(hashes.count(sha256_hex(file_bytes(b.resolve(r.image_path)))) == 0);
}

TEST_CASE("mix plans and endpoints") {
  CHECK(MixPlan{100, 1, 5, 0}.synth_count() == 500);
  CHECK(MixPlan{100, 1, 0, 0}.synth_count() == 0);
  CHECK(MixPlan{100, 0, 1, 0}.synth_count() == 100);
  CHECK(MixPlan{100, 0, 1, 0}.n_real() == 0);
  CHECK(MixPlan{10, 3, 7, 0}.synth_count() == 23);
  CHECK_THROWS_AS(MixPlan({10, 0, 0, 0}).validate(), Error);

  testing::TempDir dir("mix");
  const Manifest real = toy(dir / "real", 20);
  GeneratorConfig cfg = small_gen();
  std::vector<Image> imgs;
  std::vector<int> labels;
  for (const auto& r : real.records) imgs.push_back(real.load_image(r)), labels.push_back(r.labels->class_index);
  for (int i = 0; i < 12; ++i) imgs.push_back(imgs[static_cast<std::size_t>(i)]), labels.push_back(labels[static_cast<std::size_t>(i)]);
  const GeneratorState g = fit_generator_images(imgs, labels, default_class_names(3), Modality::FUNDUS, cfg);
  const Manifest synth = sample_synthetic(g, 120, 9, dir / "synth");

  const Manifest m15 = mix_datasets(real, synth, {20, 1, 5, 4});
  CHECK(m15.records.size() == 120);
  const Manifest only_real = mix_datasets(real, synth, {20, 1, 0, 4});
  CHECK(only_real.records == real.records);
  CHECK(only_real.root_dir == real.root_dir);
  const Manifest only_synth = mix_datasets(real, synth, {20, 0, 1, 4});
  CHECK(only_synth.records.size() == 20);
  for (const auto& r : only_synth.records) CHECK(r.synthetic);
  CHECK_THROWS_AS(mix_datasets(real, synth, {20, 1, 7, 4}), Error);

  // Every mixed record still resolves to a readable image.
  for (const auto& r : m15.records) CHECK(m15.load_image(r).height == 16);
  CHECK(mix_datasets(real, synth, {20, 1, 3, 4}).records == mix_datasets(real, synth, {20, 1, 3, 4}).records);

  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const int rc = 1 + static_cast<int>(rng.below(20));
    const int rp = static_cast<int>(rng.below(3)), sp = static_cast<int>(rng.below(6));
    if (rp == 0 && sp == 0) continue;
    const MixPlan plan{rc, rp, sp, static_cast<std::uint64_t>(t)};
    if (plan.synth_count() > 120) continue;
    const Manifest mixed = mix_datasets(real, synth, plan);
    int tagged = 0;
    for (const auto& r : mixed.records) tagged += r.synthetic;
    CHECK(tagged == plan.synth_count());
    CHECK(static_cast<int>(mixed.records.size()) == plan.n_real() + plan.synth_count());
  }
  try {
    mix_datasets(real, synth, {20, 1, 7, 4});
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InsufficientSynthetic);
  }
}

TEST_CASE("ratio sweep counts, resumes and reproduces bytes") {
  const SweepConfig cfg = tiny_sweep();
  testing::TempDir a("sweep_a"), b("sweep_b");

  SweepOptions partial;
  partial.max_new_cells = 5;
  const SweepRun first = run_ratio_sweep(cfg, a.path(), partial);
  CHECK(first.cells_computed == 5);
  CHECK_FALSE(first.complete);
  CHECK_FALSE(std::filesystem::exists(a / "sweep.json"));
  const SweepRun resumed = run_ratio_sweep(cfg, a.path());
  CHECK(resumed.cells_reused == 5);
  CHECK(resumed.cells_computed == 13);
  REQUIRE(resumed.complete);
  CHECK(resumed.result.rows.size() == 6);
  CHECK(resumed.result.rows.front().ratio_label() == "1:0");
  CHECK(resumed.result.rows.back().ratio_label() == "0:1");
  for (const auto& r : resumed.result.rows) CHECK(r.per_seed.size() == 3);

  SweepOptions two;
  two.jobs = 2;
  const SweepRun fresh = run_ratio_sweep(cfg, b.path(), two);
  CHECK(fresh.cells_computed == 18);
  CHECK(file_bytes(a / "sweep.json") == file_bytes(b / "sweep.json"));
  CHECK(file_bytes(a / "sweep.csv") == file_bytes(b / "sweep.csv"));

  const auto j = nlohmann::json::parse(file_bytes(a / "sweep.json"));
  validate_sweep_json(j);
  CHECK(SweepResult::from_json(j).to_json() == j);

  // The 1:0 cell is the plain real-data pipeline.
  const Manifest real = load_manifest(a / "real" / "manifest.jsonl");
  const Manifest down = load_manifest(a / "downstream" / "manifest.jsonl");
  CHECK(pretrain_and_probe(cfg, real, down, 1) == resumed.result.rows.front().per_seed[1]);

  const SweepRun again = run_ratio_sweep(cfg, a.path());
  CHECK(again.cells_computed == 0);
}

TEST_CASE("sweep config is strict") {
  const SweepConfig c;
  const auto j = sweep_config_to_json(c);
  CHECK(sweep_config_to_json(sweep_config_from_json(j)) == j);
  auto bad = j;
  bad["optimiser"] = "sgd";
  try {
    sweep_config_from_json(bad);
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ConfigError);
    CHECK(std::string(e.what()).find("optimiser") != std::string::npos);
  }
  bad = j;
  bad["pretrain"]["momentum"] = 0.9;
  try {
    sweep_config_from_json(bad);
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("sweep.pretrain") != std::string::npos);
    CHECK(std::string(e.what()).find("momentum") != std::string::npos);
  }
  bad = j;
  bad["ratios"] = {"1:x"};
  CHECK_THROWS_AS(sweep_config_from_json(bad), Error);
  validate_sweep_json(SweepResult{}.to_json());
  auto broken = SweepResult{}.to_json();
  broken.erase("rows");
  CHECK_THROWS_AS(validate_sweep_json(broken), Error);
}

TEST_CASE("Turing responses load from CSV") {
  testing::TempDir dir("turing");
  std::ofstream(dir / "r.csv") << "rater_id,image_id,is_synthetic,judged_synthetic\n"
                                  "r1,img1,1,1\nr1,img2,0,1\nr2,img1,true,false\nr2,img2,false,false\n";
  const auto rs = read_turing_csv(dir / "r.csv");
  REQUIRE(rs.size() == 4);
  CHECK(rs[1].image_id == "img2");
  const TuringScore s = turing_score(rs);
  CHECK(s.per_rater.at("r1") == 0.5);
  CHECK(s.per_rater.at("r2") == 0.5);
  std::ofstream(dir / "bad.csv") << "rater_id,image_id,is_synthetic,judged_synthetic\nr1,img1,yes,0\n";
  CHECK_THROWS_AS(read_turing_csv(dir / "bad.csv"), Error);
}
