#include "vfm/synthetic.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "vfm/checkpoint.hpp"
#include "vfm/decoders.hpp"
#include "vfm/digest.hpp"
#include "vfm/error.hpp"

namespace vfm {

using nlohmann::json;

void GeneratorConfig::validate() const {
  auto bad = [](const std::string& why) { throw Error(Errc::ConfigError, "generator: " + why); };
  if (image_size < 4) bad("image_size must be >= 4");
  if (latent_dim < 1 || hidden < 1) bad("latent_dim and hidden must be >= 1");
  if (steps < 0 || batch_size < 1) bad("steps >= 0 and batch_size >= 1 required");
  if (!(lr > 0.0)) bad("lr must be positive");
  if (!(kl_weight >= 0.0)) bad("kl_weight must be >= 0");
}

json generator_config_to_json(const GeneratorConfig& c) {
  return {{"image_size", c.image_size}, {"latent_dim", c.latent_dim},
          {"hidden", c.hidden},         {"steps", c.steps},
          {"batch_size", c.batch_size}, {"lr", c.lr},
          {"kl_weight", c.kl_weight},   {"class_conditional", c.class_conditional},
          {"seed", c.seed}};
}

GeneratorConfig generator_config_from_json(const json& j) {
  GeneratorConfig c;
  const json defaults = generator_config_to_json(c);
  for (const auto& item : j.items()) {
    if (!defaults.contains(item.key())) {
      throw Error(Errc::ConfigError, "generator: unknown key '" + item.key() + "'");
    }
  }
  try {
    c.image_size = j.value("image_size", c.image_size);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.hidden = j.value("hidden", c.hidden);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.kl_weight = j.value("kl_weight", c.kl_weight);
    c.class_conditional = j.value("class_conditional", c.class_conditional);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("generator: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- generator ------------------------------------------------------------

GeneratorState::GeneratorState(const GeneratorConfig& cfg, int channels,
                               std::vector<std::string> names, Modality mod)
    : class_names(std::move(names)), modality(mod), cfg_(cfg), channels_(channels) {
  cfg.validate();
  if (class_names.empty()) throw Error(Errc::ConfigError, "generator: no classes");
  Rng rng = Rng::keyed(cfg.seed, "generator_init");
  const std::size_t P = n_pixels();
  const std::size_t C = cfg.class_conditional ? class_names.size() : 0;
  const std::size_t H = static_cast<std::size_t>(cfg.hidden);
  const std::size_t L = static_cast<std::size_t>(cfg.latent_dim);
  enc_hidden = nn::Linear("gen.enc_hidden", P + C, H, rng);
  enc_mu = nn::Linear("gen.enc_mu", H, L, rng, 0.1);
  enc_logvar = nn::Linear("gen.enc_logvar", H, L, rng, 0.1);
  dec_hidden = nn::Linear("gen.dec_hidden", L + C, H, rng);
  dec_out = nn::Linear("gen.dec_out", H, P, rng, 0.5);
}

std::size_t GeneratorState::n_pixels() const {
  return static_cast<std::size_t>(cfg_.image_size) * cfg_.image_size * channels_;
}

std::vector<double> GeneratorState::input_row(const Image& img, int cls) const {
  std::vector<double> row(img.pixels);
  if (cfg_.class_conditional) {
    for (int c = 0; c < n_classes(); ++c) row.push_back(c == cls ? 1.0 : 0.0);
  }
  return row;
}

std::vector<double> GeneratorState::latent_row(std::span<const double> z, int cls) const {
  std::vector<double> row(z.begin(), z.end());
  if (cfg_.class_conditional) {
    for (int c = 0; c < n_classes(); ++c) row.push_back(c == cls ? 1.0 : 0.0);
  }
  return row;
}

namespace {

Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
  Tensor t(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), t.row(r).begin());
  return t;
}


// Forward pass plus (optionally) gradient accumulation for a batch.
double vae_batch(GeneratorState& g, const Tensor& x, const Tensor& target,
                 const std::vector<int>& classes, const Tensor& eps, bool accumulate) {
  const std::size_t B = x.rows(), P = target.cols();
  const std::size_t L = static_cast<std::size_t>(g.config().latent_dim);
  const double klw = g.config().kl_weight;
  const Tensor h_pre = g.enc_hidden.forward(x);
  const Tensor h = nn::gelu(h_pre);
  const Tensor mu = g.enc_mu.forward(h);
  const Tensor logvar = g.enc_logvar.forward(h);
  std::vector<std::vector<double>> zrows(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> z(L);
    for (std::size_t l = 0; l < L; ++l) z[l] = mu(b, l) + std::exp(0.5 * logvar(b, l)) * eps(b, l);
    const int cls = classes[b];
    if (g.config().class_conditional) {
      for (int c = 0; c < g.n_classes(); ++c) z.push_back(c == cls ? 1.0 : 0.0);
    }
    zrows[b] = std::move(z);
  }
  const Tensor zc = rows_tensor(zrows);
  const Tensor d_pre = g.dec_hidden.forward(zc);
  const Tensor d = nn::gelu(d_pre);
  Tensor y = g.dec_out.forward(d);
  for (double& v : y.values()) v = sigmoid(v);

  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double rec = 0.0, kl = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      const double e = y(b, p) - target(b, p);
      rec += e * e;
    }
    for (std::size_t l = 0; l < L; ++l) {
      kl += -0.5 * (1.0 + logvar(b, l) - mu(b, l) * mu(b, l) - std::exp(logvar(b, l)));
    }
    loss += (rec + klw * kl) / static_cast<double>(P);
  }
  loss /= static_cast<double>(B);
  if (!accumulate) return loss;

  const double scale = 1.0 / (static_cast<double>(P) * static_cast<double>(B));
  Tensor dout(B, P);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < P; ++p) {
      dout(b, p) = 2.0 * (y(b, p) - target(b, p)) * scale * y(b, p) * (1.0 - y(b, p));
    }
  }
  const Tensor dd = g.dec_out.backward(d, dout);
  const Tensor dzc = g.dec_hidden.backward(zc, nn::gelu_backward(d_pre, dd));
  Tensor dmu(B, L), dlv(B, L);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t l = 0; l < L; ++l) {
      const double s = std::exp(0.5 * logvar(b, l));
      dmu(b, l) = dzc(b, l) + klw * scale * mu(b, l);
      dlv(b, l) = dzc(b, l) * eps(b, l) * 0.5 * s + klw * scale * 0.5 * (s * s - 1.0);
    }
  }
  Tensor dh = g.enc_mu.backward(h, dmu);
  dh += g.enc_logvar.backward(h, dlv);
  g.enc_hidden.backward_params(x, nn::gelu_backward(h_pre, dh));
  return loss;
}

}  // namespace

double GeneratorState::train_step(nn::Adam& opt, const std::vector<const Image*>& batch,
                                  const std::vector<int>& classes, Rng& rng) {
  std::vector<std::vector<double>> xin, tgt;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    xin.push_back(input_row(*batch[b], classes[b]));
    tgt.push_back(batch[b]->pixels);
  }
  Tensor eps(batch.size(), static_cast<std::size_t>(cfg_.latent_dim));
  for (double& v : eps.values()) v = rng.normal();
  opt.zero_grad();
  const double loss = vae_batch(*this, rows_tensor(xin), rows_tensor(tgt), classes, eps, true);
  if (!std::isfinite(loss)) throw Error(Errc::DivergedLoss, "generator loss is not finite");
  opt.step();
  loss_history.push_back(loss);
  return loss;
}

double GeneratorState::loss(const Image& image, int cls, const std::vector<double>& eps) const {
  Tensor e(1, eps.size());
  std::copy(eps.begin(), eps.end(), e.data());
  auto& self = const_cast<GeneratorState&>(*this);
  return vae_batch(self, rows_tensor({input_row(image, cls)}), rows_tensor({image.pixels}), {cls}, e,
                   false);
}

double GeneratorState::loss_and_grad(const Image& image, int cls, const std::vector<double>& eps) {
  Tensor e(1, eps.size());
  std::copy(eps.begin(), eps.end(), e.data());
  return vae_batch(*this, rows_tensor({input_row(image, cls)}), rows_tensor({image.pixels}), {cls}, e,
                   true);
}

Image GeneratorState::decode(const std::vector<double>& z, int cls) const {
  const Tensor zc = rows_tensor({latent_row(z, cls)});
  const Tensor y = dec_out.forward(nn::gelu(dec_hidden.forward(zc)));
  Image img(cfg_.image_size, cfg_.image_size, channels_);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = sigmoid(y[i]);
  return img;
}

Image GeneratorState::sample(int cls, Rng& rng) const {
  if (cls < 0 || cls >= n_classes()) throw Error(Errc::OutOfRangeClass, "generator class " + std::to_string(cls));
  std::vector<double> z(static_cast<std::size_t>(cfg_.latent_dim));
  for (double& v : z) v = rng.normal();
  return decode(z, cls);
}

nn::ParamRefs GeneratorState::params() {
  nn::ParamRefs out;
  for (nn::Linear* l : {&enc_hidden, &enc_mu, &enc_logvar, &dec_hidden, &dec_out}) l->collect(out);
  return out;
}

nn::ConstParamRefs GeneratorState::params() const {
  nn::ConstParamRefs out;
  for (const nn::Linear* l : {&enc_hidden, &enc_mu, &enc_logvar, &dec_hidden, &dec_out}) l->collect(out);
  return out;
}

std::string GeneratorState::digest() const { return nn::params_digest(params()); }

void GeneratorState::save(const std::filesystem::path& path) const {
  Checkpoint ck;
  ck.meta = {{"kind", "generator"},
             {"config", generator_config_to_json(cfg_)},
             {"channels", channels_},
             {"class_names", class_names},
             {"modality", modality_name(modality)},
             {"loss_history", loss_history}};
  append_params(ck, params());
  save_checkpoint(path, ck);
}

GeneratorState GeneratorState::load(const std::filesystem::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.meta.value("kind", "") != "generator") {
    throw Error(Errc::CorruptCheckpoint, path.string() + " is not a generator checkpoint");
  }
  const auto mod = parse_modality(ck.meta.at("modality").get<std::string>());
  if (!mod) throw Error(Errc::CorruptCheckpoint, "generator modality");
  GeneratorState g(generator_config_from_json(ck.meta.at("config")), ck.meta.at("channels").get<int>(),
                   ck.meta.at("class_names").get<std::vector<std::string>>(), *mod);
  restore_params(ck, g.params());
  g.loss_history = ck.meta.at("loss_history").get<std::vector<double>>();
  return g;
}

GeneratorState fit_generator_images(const std::vector<Image>& images, const std::vector<int>& labels,
                                    std::vector<std::string> class_names, Modality modality,
                                    const GeneratorConfig& cfg) {
  cfg.validate();
  if (images.size() < 32) {
    throw Error(Errc::TooFewImages, "generator needs >= 32 images, got " + std::to_string(images.size()));
  }
  if (labels.size() != images.size()) throw Error(Errc::CountMismatch, "generator labels vs images");
  EncoderConfig shape;
  shape.image_size = cfg.image_size;
  shape.in_channels = images[0].channels;
  std::vector<Image> train;
  for (const Image& img : images) train.push_back(conform_image(img, shape));
  GeneratorState g(cfg, shape.in_channels, std::move(class_names), modality);
  for (int l : labels) {
    if (l < 0 || l >= g.n_classes()) throw Error(Errc::OutOfRangeClass, "generator label " + std::to_string(l));
  }
  // Start the decoder at the mean image.
  const std::size_t P = g.n_pixels();
  for (std::size_t p = 0; p < P; ++p) {
    double m = 0.0;
    for (const Image& img : train) m += img.pixels[p];
    m = std::clamp(m / static_cast<double>(train.size()), 1e-3, 1.0 - 1e-3);
    g.dec_out.bias.value[p] = std::log(m / (1.0 - m));
  }
  nn::AdamConfig ac;
  ac.lr = cfg.lr;
  nn::Adam opt(g.params(), ac);
  Rng order_rng = Rng::keyed(cfg.seed, "generator_batches");
  Rng noise = Rng::keyed(cfg.seed, "generator_noise");
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  for (int s = 0; s < cfg.steps; ++s) {
    std::vector<const Image*> batch;
    std::vector<int> classes;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        order.resize(train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);
        cursor = 0;
      }
      const std::size_t i = order[cursor++];
      batch.push_back(&train[i]);
      classes.push_back(labels[i]);
    }
    g.train_step(opt, batch, classes, noise);
  }
  return g;
}

GeneratorState fit_generator(const Manifest& manifest, const GeneratorConfig& cfg) {
  if (manifest.records.size() < 32) {
    throw Error(Errc::TooFewImages, "generator needs >= 32 images, got " +
                                        std::to_string(manifest.records.size()));
  }
  const Modality mod = manifest.records[0].modality;
  std::vector<Image> images;
  std::vector<int> labels;
  std::map<int, std::string> names;
  for (const auto& r : manifest.records) {
    if (r.modality != mod) throw Error(Errc::MixedModalities, "record " + r.id);
    images.push_back(manifest.load_image(r));
    const int c = r.labels ? r.labels->class_index : 0;
    labels.push_back(c);
    names[c] = r.labels ? r.labels->class_name : "UNLABELLED";
  }
  const int k = names.empty() ? 1 : names.rbegin()->first + 1;
  std::vector<std::string> class_names = default_class_names(std::max(k, 1));
  for (const auto& [c, n] : names) class_names[static_cast<std::size_t>(c)] = n;
  return fit_generator_images(images, labels, std::move(class_names), mod, cfg);
}

Manifest sample_synthetic(const GeneratorState& state, int n, std::uint64_t seed,
                          const std::filesystem::path& out_dir, std::optional<int> cls) {
  if (n < 1) throw Error(Errc::ConfigError, "sample count must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw Error(Errc::UnwritableOutputDir, out_dir.string());
  Manifest m;
  m.root_dir = out_dir;
  for (int i = 0; i < n; ++i) {
    const int c = cls ? *cls : i % state.n_classes();
    char id[64];
    std::snprintf(id, sizeof(id), "syn_s%llu_%05d", static_cast<unsigned long long>(seed), i);
    Rng rng = Rng::keyed(seed, id);
    const Image img = state.sample(c, rng);
    ImageRecord r;
    r.id = id;
    r.subject_id = id;
    r.modality = state.modality;
    r.image_path = std::string("images/") + id + ".png";
    r.height = img.height;
    r.width = img.width;
    r.labels = DiseaseLabel{c, state.class_names[static_cast<std::size_t>(c)], std::nullopt};
    r.synthetic = true;
    write_png(out_dir / r.image_path, img);
    m.records.push_back(std::move(r));
  }
  write_manifest(m, out_dir / "manifest.jsonl");
  return m;
}

// ---- mixing -----------------------------------------------------------------

int MixPlan::n_real() const { return real_part == 0 ? 0 : real_count; }

int MixPlan::synth_count() const {
  if (real_part == 0) return real_count;
  return static_cast<int>(static_cast<long long>(real_count) * synth_part / real_part);
}

std::string MixPlan::ratio_label() const {
  return std::to_string(real_part) + ":" + std::to_string(synth_part);
}

void MixPlan::validate() const {
  if (real_part < 0 || synth_part < 0 || (real_part == 0 && synth_part == 0)) {
    throw Error(Errc::ConfigError, "mix ratio parts must be >= 0 and not both 0");
  }
  if (real_count < 0) throw Error(Errc::ConfigError, "real_count must be >= 0");
}

namespace {

std::filesystem::path common_root(const std::filesystem::path& a, const std::filesystem::path& b) {
  const auto ca = std::filesystem::weakly_canonical(std::filesystem::absolute(a));
  const auto cb = std::filesystem::weakly_canonical(std::filesystem::absolute(b));
  std::filesystem::path out;
  auto ia = ca.begin(), ib = cb.begin();
  for (; ia != ca.end() && ib != cb.end() && *ia == *ib; ++ia, ++ib) out /= *ia;
  return out;
}

std::vector<std::size_t> pick(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

Manifest mix_datasets(const Manifest& real, const Manifest& synth, const MixPlan& plan) {
  plan.validate();
  const std::size_t n_real = static_cast<std::size_t>(plan.n_real());
  const std::size_t n_synth = static_cast<std::size_t>(plan.synth_count());
  if (n_real > real.records.size()) {
    throw Error(Errc::ConfigError, "real_count " + std::to_string(n_real) + " exceeds " +
                                       std::to_string(real.records.size()) + " real records");
  }
  if (n_synth > synth.records.size()) {
    throw Error(Errc::InsufficientSynthetic, "need " + std::to_string(n_synth) + " synthetic records, have " +
                                                 std::to_string(synth.records.size()));
  }
  Manifest out;
  out.version = real.version;
  if (n_synth == 0) {
    out.root_dir = real.root_dir;
  } else if (n_real == 0) {
    out.root_dir = synth.root_dir;
  } else {
    out.root_dir = common_root(real.root_dir, synth.root_dir);
  }
  auto rebase = [&](ImageRecord r, const Manifest& src) {
    if (src.root_dir == out.root_dir) return r;
    const auto base = std::filesystem::weakly_canonical(std::filesystem::absolute(src.root_dir));
    const auto rel = (base / r.image_path).lexically_relative(out.root_dir);
    r.image_path = rel.generic_string();
    if (r.mask_path) r.mask_path = (base / *r.mask_path).lexically_relative(out.root_dir).generic_string();
    return r;
  };
  Rng rng = Rng::keyed(plan.seed, "mix");
  for (std::size_t i : pick(real.records.size(), n_real, rng)) {
    out.records.push_back(rebase(real.records[i], real));
  }
  for (std::size_t i : pick(synth.records.size(), n_synth, rng)) {
    ImageRecord r = rebase(synth.records[i], synth);
    r.synthetic = true;
    out.records.push_back(std::move(r));
  }
  return out;
}

// ---- sweep config -------------------------------------------------------------

SweepConfig::SweepConfig() {
  real_data.task = ToyTask::CLASSIFY;
  real_data.n_images = 64;
  real_data.image_size = 32;
  real_data.patch_size = 8;
  real_data.class_count = 2;
  real_data.noise_level = 0.3;
  real_data.seed = 100;
  downstream_data = real_data;
  downstream_data.n_images = 80;
  downstream_data.seed = 200;
  encoder.image_size = 32;
  encoder.patch_size = 8;
  encoder.embed_dim = 32;
  encoder.depth = 1;
  encoder.n_heads = 4;
  pretrain.steps = 60;
  pretrain.batch_size = 8;
  pretrain.proj_dim = 64;
  pretrain.n_local_crops = 2;
  pretrain.lr = 1e-3;
  pretrain.ema_momentum = 0.99;
  generator.image_size = 32;
  generator.steps = 300;
  probe.episodes = 3;
  probe.steps = 200;
}

void SweepConfig::validate() const {
  if (ratios.empty()) throw Error(Errc::ConfigError, "sweep: ratios must not be empty");
  if (seeds.empty()) throw Error(Errc::ConfigError, "sweep: seeds must not be empty");
  std::set<std::pair<int, int>> seen;
  for (const auto& [r, s] : ratios) {
    MixPlan{1, r, s, 0}.validate();
    if (!seen.insert({r, s}).second) throw Error(Errc::ConfigError, "sweep: duplicate ratio");
  }
  real_data.validate();
  downstream_data.validate();
  encoder.validate();
  pretrain.validate();
  generator.validate();
  probe.validate();
  if (real_data.modality != downstream_data.modality) {
    throw Error(Errc::ConfigError, "sweep: real_data and downstream_data modalities differ");
  }
}

json sweep_config_to_json(const SweepConfig& c) {
  json ratios = json::array();
  for (const auto& [r, s] : c.ratios) ratios.push_back(std::to_string(r) + ":" + std::to_string(s));
  return {{"ratios", ratios},
          {"seeds", c.seeds},
          {"real_data", toy_spec_to_json(c.real_data)},
          {"downstream_data", toy_spec_to_json(c.downstream_data)},
          {"encoder", encoder_config_to_json(c.encoder)},
          {"pretrain", self_distill_config_to_json(c.pretrain)},
          {"generator", generator_config_to_json(c.generator)},
          {"probe", probe_config_to_json(c.probe)},
          {"pooling", c.pooling == FeaturePooling::CLS ? "cls" : "mean_patch"}};
}

namespace {

std::pair<int, int> parse_ratio(const std::string& s) {
  const auto colon = s.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    const int r = std::stoi(s.substr(0, colon), &used);
    if (used != colon) throw std::invalid_argument(s);
    const std::string rest = s.substr(colon + 1);
    const int q = std::stoi(rest, &used);
    if (used != rest.size()) throw std::invalid_argument(s);
    return {r, q};
  } catch (const std::exception&) {
    throw Error(Errc::ConfigError, "sweep.ratios: cannot parse '" + s + "' as real:synthetic");
  }
}

// Nested loaders report the section they were reading.
template <typename F>
auto in_section(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), "sweep." + name + ": " + e.detail());
  }
}

}  // namespace

SweepConfig sweep_config_from_json(const json& j) {
  SweepConfig c;
  const json defaults = sweep_config_to_json(c);
  for (const auto& item : j.items()) {
    if (!defaults.contains(item.key())) {
      throw Error(Errc::ConfigError, "sweep: unknown key '" + item.key() + "'");
    }
  }
  try {
    if (j.contains("ratios")) {
      c.ratios.clear();
      for (const auto& r : j["ratios"]) c.ratios.push_back(parse_ratio(r.get<std::string>()));
    }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("pooling")) {
      const auto p = j["pooling"].get<std::string>();
      if (p == "cls") {
        c.pooling = FeaturePooling::CLS;
      } else if (p == "mean_patch") {
        c.pooling = FeaturePooling::MEAN_PATCH;
      } else {
        throw Error(Errc::ConfigError, "sweep.pooling: unknown value '" + p + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("sweep: ") + e.what());
  }
  // Sections start from the sweep defaults; keys given in the file override them.
  auto merged = [&](const char* key) {
    json base = defaults[key];
    if (j.contains(key)) {
      if (!j[key].is_object()) throw Error(Errc::ConfigError, std::string("sweep.") + key + " must be an object");
      // Unknown keys survive the merge and are rejected by the section parser.
      for (const auto& item : j[key].items()) base[item.key()] = item.value();
    }
    return base;
  };
  c.real_data = in_section("real_data", [&] { return toy_spec_from_json(merged("real_data")); });
  c.downstream_data =
      in_section("downstream_data", [&] { return toy_spec_from_json(merged("downstream_data")); });
  c.encoder = in_section("encoder", [&] { return encoder_config_from_json(merged("encoder")); });
  c.pretrain = in_section("pretrain", [&] { return self_distill_config_from_json(merged("pretrain")); });
  c.generator = in_section("generator", [&] { return generator_config_from_json(merged("generator")); });
  c.probe = in_section("probe", [&] { return probe_config_from_json(merged("probe")); });
  c.validate();
  return c;
}

// ---- sweep result -------------------------------------------------------------

std::string SweepRow::ratio_label() const {
  return std::to_string(real_part) + ":" + std::to_string(synth_part);
}

const SweepRow& SweepResult::best() const {
  if (rows.empty()) throw Error(Errc::SchemaViolation, "sweep result has no rows");
  const SweepRow* b = &rows[0];
  for (const auto& r : rows) {
    if (r.metric_mean > b->metric_mean) b = &r;
  }
  return *b;
}

json SweepResult::to_json() const {
  json jr = json::array();
  for (const auto& r : rows) {
    jr.push_back({{"ratio", r.ratio_label()},
                  {"real_part", r.real_part},
                  {"synth_part", r.synth_part},
                  {"n_real", r.n_real},
                  {"n_synth", r.n_synth},
                  {"metric_mean", r.metric_mean},
                  {"metric_std", r.metric_std},
                  {"seeds", r.seeds},
                  {"per_seed", r.per_seed}});
  }
  json j = {{"metric", metric}, {"config_digest", config_digest}, {"rows", jr}};
  if (!rows.empty()) j["best_ratio"] = best().ratio_label();
  return j;
}

void validate_sweep_json(const json& j) {
  auto need = [](const json& obj, const std::string& path, const char* key, auto pred) {
    if (!obj.is_object() || !obj.contains(key) || !pred(obj[key])) {
      throw Error(Errc::SchemaViolation, path + key);
    }
  };
  auto is_str = [](const json& v) { return v.is_string(); };
  auto is_int = [](const json& v) { return v.is_number_integer(); };
  auto is_num = [](const json& v) { return v.is_number(); };
  auto is_arr = [](const json& v) { return v.is_array(); };
  need(j, "", "metric", is_str);
  need(j, "", "config_digest", is_str);
  need(j, "", "rows", is_arr);
  for (std::size_t i = 0; i < j["rows"].size(); ++i) {
    const json& r = j["rows"][i];
    const std::string p = "rows[" + std::to_string(i) + "].";
    need(r, p, "ratio", is_str);
    need(r, p, "real_part", is_int);
    need(r, p, "synth_part", is_int);
    need(r, p, "n_real", is_int);
    need(r, p, "n_synth", is_int);
    need(r, p, "metric_mean", is_num);
    need(r, p, "metric_std", is_num);
    need(r, p, "seeds", is_arr);
    need(r, p, "per_seed", is_arr);
    if (r["seeds"].size() != r["per_seed"].size()) throw Error(Errc::SchemaViolation, p + "per_seed");
  }
}

SweepResult SweepResult::from_json(const json& j) {
  validate_sweep_json(j);
  SweepResult s;
  s.metric = j["metric"].get<std::string>();
  s.config_digest = j["config_digest"].get<std::string>();
  for (const auto& r : j["rows"]) {
    SweepRow row;
    row.real_part = r["real_part"].get<int>();
    row.synth_part = r["synth_part"].get<int>();
    row.n_real = r["n_real"].get<int>();
    row.n_synth = r["n_synth"].get<int>();
    row.metric_mean = r["metric_mean"].get<double>();
    row.metric_std = r["metric_std"].get<double>();
    row.seeds = r["seeds"].get<std::vector<std::uint64_t>>();
    row.per_seed = r["per_seed"].get<std::vector<double>>();
    s.rows.push_back(std::move(row));
  }
  return s;
}

std::string SweepResult::to_csv() const {
  std::ostringstream out;
  out << "ratio,n_real,n_synth,metric_mean,metric_std,seeds\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.ratio_label() << ',' << r.n_real << ',' << r.n_synth << ',';
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,", r.metric_mean, r.metric_std);
    out << buf;
    for (std::size_t i = 0; i < r.seeds.size(); ++i) out << (i ? ";" : "") << r.seeds[i];
    out << '\n';
  }
  return out.str();
}

// ---- sweep driver -------------------------------------------------------------

double pretrain_and_probe(const SweepConfig& cfg, const Manifest& train, const Manifest& downstream,
                          std::uint64_t seed) {
  if (train.records.empty()) throw Error(Errc::EmptyManifest, "sweep cell has no training images");
  std::vector<Image> images;
  std::vector<std::string> keys;
  for (const auto& r : train.records) {
    images.push_back(conform_image(train.load_image(r), cfg.encoder));
    keys.push_back(r.id);
  }
  SelfDistillConfig pc = cfg.pretrain;
  pc.seed = seed;
  pc.checkpoint_every = 0;
  const PretrainResult pr = pretrain_images(images, keys, train.records[0].modality, cfg.encoder, pc);
  ProbeConfig probe = cfg.probe;
  probe.seed = seed;
  const FeatureTable t = extract_features(pr.state.teacher, downstream, std::nullopt, cfg.pooling);
  return linear_probe(t.features, t.labels, probe).auc_mean;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::UnwritablePath, tmp);
    out << text;
    if (!out) throw Error(Errc::UnwritablePath, tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::optional<json> read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

// A stage directory is reused when its marker names the current config digest.
bool stage_done(const std::filesystem::path& marker, const std::string& digest) {
  const auto j = read_json(marker);
  return j && j->value("config_digest", "") == digest;
}

void mark_stage(const std::filesystem::path& marker, const std::string& digest) {
  write_text(marker, json({{"config_digest", digest}}).dump() + "\n");
}

std::string cell_name(int r, int s, std::uint64_t seed) {
  return "r" + std::to_string(r) + "_s" + std::to_string(s) + "_seed" + std::to_string(seed) + ".json";
}

}  // namespace

SweepRun run_ratio_sweep(const SweepConfig& cfg, const std::filesystem::path& out_dir,
                         const SweepOptions& opt) {
  cfg.validate();
  if (opt.jobs < 1) throw Error(Errc::ConfigError, "sweep: jobs must be >= 1");
  const std::string digest = sha256_hex(sweep_config_to_json(cfg).dump());
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "cells", ec);
  if (ec) throw Error(Errc::UnwritableOutputDir, out_dir.string());

  auto data_stage = [&](const ToyDataSpec& spec, const char* name) {
    const auto dir = out_dir / name;
    if (stage_done(dir / "stage.json", digest)) return load_manifest(dir / "manifest.jsonl");
    std::filesystem::remove_all(dir);
    Manifest m = generate_toy_dataset(spec, dir);
    mark_stage(dir / "stage.json", digest);
    return m;
  };
  const Manifest real = data_stage(cfg.real_data, "real");
  const Manifest downstream = data_stage(cfg.downstream_data, "downstream");

  int max_synth = 0;
  for (const auto& [r, s] : cfg.ratios) {
    max_synth = std::max(max_synth, MixPlan{static_cast<int>(real.records.size()), r, s, 0}.synth_count());
  }
  Manifest synth;
  const auto synth_dir = out_dir / "synthetic";
  if (max_synth > 0) {
    if (stage_done(synth_dir / "stage.json", digest)) {
      synth = load_manifest(synth_dir / "manifest.jsonl");
    } else {
      std::filesystem::remove_all(synth_dir);
      const GeneratorState gen = fit_generator(real, cfg.generator);
      synth = sample_synthetic(gen, max_synth, cfg.generator.seed, synth_dir);
      gen.save(synth_dir / "generator.ckpt");
      mark_stage(synth_dir / "stage.json", digest);
    }
  }
  synth.root_dir = synth_dir;

  struct Cell {
    int r, s;
    std::uint64_t seed;
    std::filesystem::path path;
  };
  std::vector<Cell> all, pending;
  for (const auto& [r, s] : cfg.ratios) {
    for (std::uint64_t seed : cfg.seeds) all.push_back({r, s, seed, out_dir / "cells" / cell_name(r, s, seed)});
  }
  SweepRun run;
  for (const Cell& c : all) {
    if (stage_done(c.path, digest)) {
      ++run.cells_reused;
    } else {
      pending.push_back(c);
    }
  }
  if (opt.max_new_cells > 0 && static_cast<int>(pending.size()) > opt.max_new_cells) {
    pending.resize(static_cast<std::size_t>(opt.max_new_cells));
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(pending.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < pending.size(); i = next++) {
      const Cell& c = pending[i];
      try {
        MixPlan plan{static_cast<int>(real.records.size()), c.r, c.s, c.seed};
        const Manifest mixed = mix_datasets(real, synth, plan);
        const double metric = pretrain_and_probe(cfg, mixed, downstream, c.seed);
        const json cell = {{"config_digest", digest},
                           {"ratio", plan.ratio_label()},
                           {"seed", c.seed},
                           {"n_real", plan.n_real()},
                           {"n_synth", plan.synth_count()},
                           {"mixed_manifest_digest", mixed.digest()},
                           {"metric", metric}};
        write_text(c.path, cell.dump(2) + "\n");
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n_threads = std::min<int>(opt.jobs, static_cast<int>(pending.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  run.cells_computed = static_cast<int>(pending.size());

  // Assemble from the cell files so the table never depends on which process
  // computed which cell.
  run.result.config_digest = digest;
  run.complete = true;
  for (const auto& [r, s] : cfg.ratios) {
    SweepRow row;
    row.real_part = r;
    row.synth_part = s;
    for (std::uint64_t seed : cfg.seeds) {
      const auto cell = read_json(out_dir / "cells" / cell_name(r, s, seed));
      if (!cell || cell->value("config_digest", "") != digest) {
        run.complete = false;
        continue;
      }
      row.n_real = cell->at("n_real").get<int>();
      row.n_synth = cell->at("n_synth").get<int>();
      row.seeds.push_back(seed);
      row.per_seed.push_back(cell->at("metric").get<double>());
    }
    if (!row.per_seed.empty()) {
      row.metric_mean = mean_of(row.per_seed);
      row.metric_std = population_std(row.per_seed);
    }
    run.result.rows.push_back(std::move(row));
  }
  if (run.complete) {
    write_text(out_dir / "sweep.json", run.result.to_json().dump(2) + "\n");
    write_text(out_dir / "sweep.csv", run.result.to_csv());
  }
  return run;
}

// ---- Turing responses -------------------------------------------------------------

std::vector<TuringResponse> read_turing_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::MissingFile, path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::SchemaViolation, path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "rater_id,image_id,is_synthetic,judged_synthetic") {
    throw Error(Errc::SchemaViolation, path.string() + ": unexpected header '" + line + "'");
  }
  auto parse_bool = [&](const std::string& v, int line_no, const char* field) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw Error(Errc::SchemaViolation,
                path.string() + " line " + std::to_string(line_no) + ": field " + field);
  };
  std::vector<TuringResponse> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 4) {
      throw Error(Errc::SchemaViolation, path.string() + " line " + std::to_string(line_no) +
                                             ": expected 4 fields");
    }
    TuringResponse r;
    r.rater_id = f[0];
    r.image_id = f[1];
    r.is_synthetic = parse_bool(f[2], line_no, "is_synthetic");
    r.judged_synthetic = parse_bool(f[3], line_no, "judged_synthetic");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace vfm
