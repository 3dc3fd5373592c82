#include "vfm/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <set>

#include "vfm/checkpoint.hpp"
#include "vfm/digest.hpp"
#include "vfm/error.hpp"
#include "vfm/metrics.hpp"
#include "vfm/nn.hpp"
#include "vfm/pretrain.hpp"

namespace vfm {

using nlohmann::json;

namespace {

const char* pooling_name(FeaturePooling p) { return p == FeaturePooling::CLS ? "cls" : "mean_patch"; }

std::string payload_digest(const FeatureTable& t) {
  Sha256 h;
  h.update(std::span<const double>(t.features.values()));
  for (int l : t.labels) h.update(std::to_string(l) + ",");
  for (const auto& id : t.ids) h.update(id + "\n");
  return h.hex();
}

std::optional<FeatureTable> read_cache(const std::filesystem::path& path,
                                       const std::string& enc_digest,
                                       const std::string& man_digest) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  auto corrupt = [&](const std::string& why) {
    return Error(Errc::CacheCorruption, path.string() + ": " + why);
  };
  Checkpoint ck;
  try {
    ck = load_checkpoint(path);
  } catch (const Error& e) {
    throw corrupt(e.what());
  }
  const json& m = ck.meta;
  if (m.value("kind", "") != "features" || !ck.has("features")) throw corrupt("not a feature table");
  if (m.value("encoder_digest", "") != enc_digest) throw corrupt("encoder digest mismatch");
  if (m.value("manifest_digest", "") != man_digest) throw corrupt("manifest digest mismatch");
  FeatureTable t;
  t.features = ck.array("features");
  t.labels = m.at("labels").get<std::vector<int>>();
  t.ids = m.at("ids").get<std::vector<std::string>>();
  t.encoder_digest = enc_digest;
  t.manifest_digest = man_digest;
  if (t.labels.size() != t.features.rows() || t.ids.size() != t.features.rows()) {
    throw corrupt("row count mismatch");
  }
  if (m.value("payload_sha256", "") != payload_digest(t)) throw corrupt("payload hash mismatch");
  t.from_cache = true;
  return t;
}

void write_cache(const std::filesystem::path& path, const FeatureTable& t) {
  Checkpoint ck;
  ck.meta = {{"kind", "features"},
             {"encoder_digest", t.encoder_digest},
             {"manifest_digest", t.manifest_digest},
             {"labels", t.labels},
             {"ids", t.ids},
             {"payload_sha256", payload_digest(t)}};
  ck.arrays.emplace_back("features", t.features);
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw Error(Errc::UnwritablePath, path.parent_path().string());
  // Write then rename so an interrupted run never leaves a half-written table.
  const auto tmp = path.string() + ".tmp";
  save_checkpoint(tmp, ck);
  std::filesystem::rename(tmp, path);
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  Tensor out(rows.size(), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(x.row(rows[r]).begin(), x.row(rows[r]).end(), out.row(r).begin());
  }
  return out;
}

}  // namespace

std::filesystem::path feature_cache_path(const std::filesystem::path& cache_dir,
                                         const std::string& encoder_digest,
                                         const std::string& manifest_digest,
                                         FeaturePooling pooling) {
  return cache_dir / ("features_" + encoder_digest.substr(0, 16) + "_" +
                      manifest_digest.substr(0, 16) + "_" + pooling_name(pooling) + ".vfm");
}

FeatureTable extract_features(const Encoder& encoder, const Manifest& manifest,
                              const std::optional<std::filesystem::path>& cache_dir,
                              FeaturePooling pooling, bool allow_cross_modality) {
  const std::string enc_digest = encoder.digest();
  const std::string man_digest = manifest.digest();
  std::optional<std::filesystem::path> path;
  if (cache_dir) {
    path = feature_cache_path(*cache_dir, enc_digest, man_digest, pooling);
    if (auto cached = read_cache(*path, enc_digest, man_digest)) return *cached;
  }
  FeatureTable t;
  t.encoder_digest = enc_digest;
  t.manifest_digest = man_digest;
  const std::size_t D = static_cast<std::size_t>(encoder.config().embed_dim);
  t.features = Tensor(manifest.records.size(), D);
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const ImageRecord& rec = manifest.records[i];
    const Image img = conform_image(manifest.load_image(rec), encoder.config());
    const EmbeddingSet e = encoder.encode(img, rec.modality, allow_cross_modality);
    auto row = t.features.row(i);
    if (pooling == FeaturePooling::CLS) {
      std::copy(e.cls.begin(), e.cls.end(), row.begin());
    } else {
      for (std::size_t p = 0; p < e.patches.rows(); ++p) {
        for (std::size_t d = 0; d < D; ++d) row[d] += e.patches(p, d);
      }
      for (double& v : row) v /= static_cast<double>(e.patches.rows());
    }
    t.labels.push_back(rec.labels ? rec.labels->class_index : -1);
    t.ids.push_back(rec.id);
  }
  if (path) write_cache(*path, t);
  return t;
}

void ProbeConfig::validate() const {
  auto bad = [](const std::string& why) { throw Error(Errc::ConfigError, "probe: " + why); };
  if (k_shot && *k_shot < 1) bad("k_shot must be >= 1");
  if (episodes < 1) bad("episodes must be >= 1");
  if (steps < 1) bad("steps must be >= 1");
  if (!(lr > 0.0)) bad("lr must be positive");
  if (!(weight_decay >= 0.0)) bad("weight_decay must be >= 0");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) bad("test_fraction must lie in (0, 1)");
}

json probe_config_to_json(const ProbeConfig& c) {
  json j = {{"task", c.task},           {"episodes", c.episodes},
            {"lr", c.lr},               {"steps", c.steps},
            {"weight_decay", c.weight_decay}, {"test_fraction", c.test_fraction},
            {"seed", c.seed}};
  j["k_shot"] = c.k_shot ? json(*c.k_shot) : json(nullptr);
  return j;
}

ProbeConfig probe_config_from_json(const json& j) {
  ProbeConfig c;
  const json defaults = probe_config_to_json(c);
  for (const auto& item : j.items()) {
    if (!defaults.contains(item.key())) {
      throw Error(Errc::ConfigError, "probe: unknown key '" + item.key() + "'");
    }
  }
  try {
    c.task = j.value("task", c.task);
    if (j.contains("k_shot") && !j["k_shot"].is_null()) c.k_shot = j["k_shot"].get<int>();
    c.episodes = j.value("episodes", c.episodes);
    c.lr = j.value("lr", c.lr);
    c.steps = j.value("steps", c.steps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("probe: ") + e.what());
  }
  c.validate();
  return c;
}

Tensor LinearProbe::predict_proba(const Tensor& features) const {
  const std::size_t C = weight.rows(), D = weight.cols();
  if (features.cols() != D) throw Error(Errc::DimMismatch, "probe feature width mismatch");
  Tensor logits(features.rows(), C);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = bias[c];
      for (std::size_t d = 0; d < D; ++d) {
        s += weight(c, d) * (features(i, d) - feat_mean[d]) / feat_std[d];
      }
      logits(i, c) = s;
    }
  }
  return nn::softmax_rows(logits);
}

LinearProbe fit_linear_probe(const Tensor& features, const std::vector<int>& labels, int n_classes,
                             const ProbeConfig& cfg) {
  const std::size_t n = features.rows(), D = features.cols();
  const std::size_t C = static_cast<std::size_t>(n_classes);
  if (labels.size() != n) throw Error(Errc::CountMismatch, "probe labels vs features");
  std::set<int> present(labels.begin(), labels.end());
  if (present.size() < 2) throw Error(Errc::SingleClassTrainSet, "probe training set has one class");
  for (int l : labels) {
    if (l < 0 || l >= n_classes) throw Error(Errc::OutOfRangeClass, "probe label " + std::to_string(l));
  }
  LinearProbe p;
  p.feat_mean.assign(D, 0.0);
  p.feat_std.assign(D, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < D; ++d) p.feat_mean[d] += features(i, d) / static_cast<double>(n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < D; ++d) {
      const double z = features(i, d) - p.feat_mean[d];
      p.feat_std[d] += z * z / static_cast<double>(n);
    }
  }
  for (double& s : p.feat_std) s = s > 1e-24 ? std::sqrt(s) : 1.0;
  Tensor x(n, D);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < D; ++d) x(i, d) = (features(i, d) - p.feat_mean[d]) / p.feat_std[d];
  }

  nn::Param w("probe.weight", Tensor(C, D, 0.0));
  nn::Param b("probe.bias", Tensor(1, C, 0.0));
  nn::AdamConfig ac;
  ac.lr = cfg.lr;
  nn::Adam opt({&w, &b}, ac);
  Tensor logits(n, C);
  for (int step = 0; step < cfg.steps; ++step) {
    opt.zero_grad();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < C; ++c) {
        double s = b.value[c];
        for (std::size_t d = 0; d < D; ++d) s += w.value(c, d) * x(i, d);
        logits(i, c) = s;
      }
    }
    Tensor prob = nn::softmax_rows(logits);
    for (std::size_t i = 0; i < n; ++i) {
      prob(i, static_cast<std::size_t>(labels[i])) -= 1.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double g = prob(i, c) / static_cast<double>(n);
        b.grad[c] += g;
        for (std::size_t d = 0; d < D; ++d) w.grad(c, d) += g * x(i, d);
      }
    }
    for (std::size_t k = 0; k < w.value.size(); ++k) w.grad[k] += cfg.weight_decay * w.value[k];
    opt.step();
    if (!w.value.all_finite()) throw Error(Errc::DivergedLoss, "linear probe diverged");
  }
  p.weight = w.value;
  p.bias.assign(b.value.values().begin(), b.value.values().end());
  return p;
}

double probe_auc(const Tensor& probs, const std::vector<int>& labels) {
  const std::size_t C = probs.cols();
  std::vector<double> s(labels.size());
  std::vector<int> y(labels.size());
  auto one_vs_rest = [&](std::size_t c) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      s[i] = probs(i, c);
      y[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
    }
    return roc_auc(s, y);
  };
  if (C == 2) return one_vs_rest(1);
  double total = 0.0;
  int used = 0;
  for (std::size_t c = 0; c < C; ++c) {
    if (std::find(labels.begin(), labels.end(), static_cast<int>(c)) == labels.end()) continue;
    total += one_vs_rest(c);
    ++used;
  }
  if (used == 0) throw Error(Errc::SingleClass, "no classes in evaluation set");
  return total / used;
}

namespace {

EpisodeSplit stratified_split(const std::vector<int>& labels, double test_fraction, Rng& rng) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) by_class[labels[i]].push_back(i);
  }
  EpisodeSplit s;
  for (auto& [c, rows] : by_class) {
    rng.shuffle(rows);
    std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * rows.size()));
    if (rows.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, rows.size() - 1);
    s.query.insert(s.query.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.support.insert(s.support.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_test), rows.end());
  }
  std::sort(s.support.begin(), s.support.end());
  std::sort(s.query.begin(), s.query.end());
  return s;
}

EpisodeSplit k_shot_split(const std::vector<int>& labels, int k, Rng& rng) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) by_class[labels[i]].push_back(i);
  }
  EpisodeSplit s;
  for (auto& [c, rows] : by_class) {
    if (rows.size() < static_cast<std::size_t>(k)) {
      throw Error(Errc::InsufficientExamples, "class " + std::to_string(c) + ": have " +
                                                  std::to_string(rows.size()) + ", need " +
                                                  std::to_string(k));
    }
    rng.shuffle(rows);
    s.support.insert(s.support.end(), rows.begin(), rows.begin() + k);
    s.query.insert(s.query.end(), rows.begin() + k, rows.end());
  }
  std::sort(s.support.begin(), s.support.end());
  std::sort(s.query.begin(), s.query.end());
  return s;
}

}  // namespace

EpisodeSplit few_shot_split(const std::vector<int>& labels, int k, std::uint64_t seed) {
  if (k < 1) throw Error(Errc::ConfigError, "k must be >= 1");
  Rng rng = Rng::keyed(seed, "few_shot");
  return k_shot_split(labels, k, rng);
}

FewShotEpisode few_shot_episode(const Manifest& manifest, int k, std::uint64_t seed) {
  std::vector<int> labels;
  for (const auto& r : manifest.records) labels.push_back(r.labels ? r.labels->class_index : -1);
  const EpisodeSplit s = few_shot_split(labels, k, seed);
  FewShotEpisode ep;
  for (Manifest* m : {&ep.support, &ep.query}) {
    m->version = manifest.version;
    m->root_dir = manifest.root_dir;
  }
  for (std::size_t i : s.support) ep.support.records.push_back(manifest.records[i]);
  for (std::size_t i : s.query) ep.query.records.push_back(manifest.records[i]);
  return ep;
}

ProbeResult linear_probe(const Tensor& features, const std::vector<int>& labels,
                         const ProbeConfig& cfg) {
  cfg.validate();
  if (labels.size() != features.rows()) throw Error(Errc::CountMismatch, "labels vs features");
  int n_classes = 0;
  for (int l : labels) n_classes = std::max(n_classes, l + 1);
  ProbeResult res;
  res.k_shot = cfg.k_shot;
  res.episodes.resize(static_cast<std::size_t>(cfg.episodes));
  // Episodes are independent; results land in their own slots.
  std::vector<std::exception_ptr> errors(res.episodes.size());
#pragma omp parallel for schedule(dynamic)
  for (int e = 0; e < cfg.episodes; ++e) {
    try {
      Rng rng = Rng::keyed(cfg.seed, "probe_episode_" + std::to_string(e));
      const EpisodeSplit split = cfg.k_shot ? k_shot_split(labels, *cfg.k_shot, rng)
                                            : stratified_split(labels, cfg.test_fraction, rng);
      std::vector<int> ytr, yte;
      for (std::size_t i : split.support) ytr.push_back(labels[i]);
      for (std::size_t i : split.query) yte.push_back(labels[i]);
      const LinearProbe probe = fit_linear_probe(gather_rows(features, split.support), ytr,
                                                 n_classes, cfg);
      const Tensor prob = probe.predict_proba(gather_rows(features, split.query));
      std::vector<int> pred(yte.size());
      for (std::size_t i = 0; i < yte.size(); ++i) {
        const auto row = prob.row(i);
        pred[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      }
      EpisodeResult& r = res.episodes[static_cast<std::size_t>(e)];
      r.episode = e;
      r.auc = probe_auc(prob, yte);
      r.accuracy = accuracy(pred, yte);
      r.n_train = ytr.size();
      r.n_test = yte.size();
    } catch (...) {
      errors[static_cast<std::size_t>(e)] = std::current_exception();
    }
  }
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
  std::vector<double> aucs, accs;
  for (const auto& r : res.episodes) aucs.push_back(r.auc), accs.push_back(r.accuracy);
  res.auc_mean = mean_of(aucs);
  res.auc_std = population_std(aucs);
  res.accuracy_mean = mean_of(accs);
  return res;
}

ProbeResult probe_encoder(const Encoder& encoder, const Manifest& manifest, const ProbeConfig& cfg,
                          const std::optional<std::filesystem::path>& cache_dir,
                          FeaturePooling pooling) {
  const std::string before = encoder.digest();
  const FeatureTable t = extract_features(encoder, manifest, cache_dir, pooling, true);
  ProbeResult r = linear_probe(t.features, t.labels, cfg);
  r.encoder_digest_before = before;
  r.encoder_digest_after = encoder.digest();
  return r;
}

json ProbeResult::to_json() const {
  json eps = json::array();
  for (const auto& e : episodes) {
    eps.push_back({{"episode", e.episode},
                   {"auc", e.auc},
                   {"accuracy", e.accuracy},
                   {"n_train", e.n_train},
                   {"n_test", e.n_test}});
  }
  return {{"episodes", eps},
          {"auc_mean", auc_mean},
          {"auc_std", auc_std},
          {"accuracy_mean", accuracy_mean},
          {"k_shot", k_shot ? json(*k_shot) : json(nullptr)},
          {"encoder_digest_before", encoder_digest_before},
          {"encoder_digest_after", encoder_digest_after}};
}

}  // namespace vfm
