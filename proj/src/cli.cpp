#include "vfm/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "vfm/adaptation.hpp"
#include "vfm/digest.hpp"
#include "vfm/error.hpp"
#include "vfm/explain.hpp"
#include "vfm/pretrain.hpp"
#include "vfm/synthetic.hpp"
#include "vfm/version.hpp"

namespace vfm {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- configuration ------------------------------------------------------------

namespace {

const std::set<std::string> kRunKeys = {"seed",     "out_dir", "log_level", "plots",
                                        "data",     "encoder", "pretrain",  "task",
                                        "probe",    "sweep",   "explain"};
const std::set<std::string> kDataKeys = {"manifest"};
const std::set<std::string> kExplainKeys = {"layer", "merge", "max_images"};

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& prefix) {
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) {
      throw Error(Errc::ConfigError, "unknown key '" + prefix + item.key() + "'");
    }
  }
}

json section(const json& j, const char* key) {
  if (!j.contains(key)) return json::object();
  if (!j[key].is_object()) throw Error(Errc::ConfigError, std::string("'") + key + "' must be an object");
  return j[key];
}

}  // namespace

json train_options_to_json(const TrainOptions& t) {
  return {{"steps", t.steps},
          {"batch_size", t.batch_size},
          {"lr", t.lr},
          {"weight_decay", t.weight_decay},
          {"finetune_encoder", t.finetune_encoder},
          {"encoder_lr", t.encoder_lr},
          {"cosine_decay", t.cosine_decay},
          {"seed", t.seed}};
}

TrainOptions train_options_from_json(const json& j) {
  TrainOptions t;
  const json defaults = train_options_to_json(t);
  for (const auto& item : j.items()) {
    if (!defaults.contains(item.key())) {
      throw Error(Errc::ConfigError, "task.train: unknown key '" + item.key() + "'");
    }
  }
  try {
    t.steps = j.value("steps", t.steps);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.lr = j.value("lr", t.lr);
    t.weight_decay = j.value("weight_decay", t.weight_decay);
    t.finetune_encoder = j.value("finetune_encoder", t.finetune_encoder);
    t.encoder_lr = j.value("encoder_lr", t.encoder_lr);
    t.cosine_decay = j.value("cosine_decay", t.cosine_decay);
    t.seed = j.value("seed", t.seed);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("task.train: ") + e.what());
  }
  if (t.steps < 1 || t.batch_size < 1 || !(t.lr > 0.0) || !(t.encoder_lr > 0.0)) {
    throw Error(Errc::ConfigError, "task.train: steps, batch_size, lr and encoder_lr must be positive");
  }
  return t;
}

HeadType parse_task_name(const std::string& name) {
  static const std::map<std::string, HeadType> kAliases = {
      {"CLASSIFY", HeadType::CLASSIFIER}, {"SEGMENT", HeadType::SEGMENTER},
      {"SEGMENT_VESSEL", HeadType::SEGMENTER}, {"SEGMENT_LAYER", HeadType::SEGMENTER},
      {"LANDMARK", HeadType::LANDMARK},   {"BIOMARKER", HeadType::REGRESSOR},
      {"FORECAST", HeadType::FORECASTER}};
  std::string upper = name;
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  if (auto it = kAliases.find(upper); it != kAliases.end()) return it->second;
  if (auto t = parse_head_type(upper)) return *t;
  throw Error(Errc::ConfigError, "unknown task '" + name + "'");
}

json task_config_to_json(const TaskConfig& t) {
  return {{"type", head_type_name(t.type)},
          {"hidden", t.hidden},
          {"dice_weight", t.dice_weight},
          {"bootstrap", t.bootstrap},
          {"train", train_options_to_json(t.train)}};
}

TaskConfig task_config_from_json(const json& j) {
  TaskConfig t;
  reject_unknown(j, {"type", "hidden", "dice_weight", "bootstrap", "train"}, "task.");
  try {
    if (j.contains("type")) t.type = parse_task_name(j["type"].get<std::string>());
    t.hidden = j.value("hidden", t.hidden);
    t.dice_weight = j.value("dice_weight", t.dice_weight);
    t.bootstrap = j.value("bootstrap", t.bootstrap);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("task: ") + e.what());
  }
  if (j.contains("train")) t.train = train_options_from_json(j["train"]);
  if (t.hidden < 0 || t.bootstrap < 0 || t.dice_weight < 0.0) {
    throw Error(Errc::ConfigError, "task: hidden, bootstrap and dice_weight must be >= 0");
  }
  return t;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::ConfigError, "run config must be a JSON object");
  reject_unknown(j, kRunKeys, "");
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("out_dir")) c.out_dir = fs::path(j["out_dir"].get<std::string>());
    c.log_level = j.value("log_level", c.log_level);
    c.plots = j.value("plots", c.plots);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("run config: ") + e.what());
  }
  static const std::set<std::string> kLevels = {"error", "warn", "info", "debug"};
  if (!kLevels.count(c.log_level)) throw Error(Errc::ConfigError, "log_level: unknown value '" + c.log_level + "'");
  c.data = section(j, "data");
  c.encoder = section(j, "encoder");
  c.pretrain = section(j, "pretrain");
  c.task = section(j, "task");
  c.probe = section(j, "probe");
  c.sweep = section(j, "sweep");
  c.explain = section(j, "explain");
  reject_unknown(c.data, kDataKeys, "data.");
  reject_unknown(c.explain, kExplainKeys, "explain.");
  // Eager validation so a bad key fails before any work starts.
  encoder_config_from_json(c.encoder);
  self_distill_config_from_json(c.pretrain);
  task_config_from_json(c.task);
  probe_config_from_json(c.probe);
  if (!c.sweep.empty()) sweep_config_from_json(c.sweep);
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j = {{"seed", c.seed},         {"log_level", c.log_level}, {"plots", c.plots},
            {"data", c.data},         {"encoder", c.encoder},     {"pretrain", c.pretrain},
            {"task", c.task},         {"probe", c.probe},         {"sweep", c.sweep},
            {"explain", c.explain}};
  if (c.out_dir) j["out_dir"] = c.out_dir->string();
  return j;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

std::string config_digest(const json& resolved) { return sha256_hex(resolved.dump()); }

// ---- reports -------------------------------------------------------------------

void write_curve_plot(const fs::path& path, const std::vector<CurvePoint>& curve) {
  constexpr int kSize = 240, kMargin = 20;
  Image img(kSize, kSize, 3, 1.0);
  auto put = [&](int x, int y, double r, double g, double b) {
    if (x < 0 || y < 0 || x >= kSize || y >= kSize) return;
    img.at(y, x, 0) = r, img.at(y, x, 1) = g, img.at(y, x, 2) = b;
  };
  for (int i = kMargin; i < kSize - kMargin; ++i) {
    put(i, kSize - kMargin, 0.4, 0.4, 0.4);
    put(kMargin, i, 0.4, 0.4, 0.4);
  }
  if (!curve.empty()) {
    double x0 = curve[0].x, x1 = curve[0].x, y0 = curve[0].y, y1 = curve[0].y;
    for (const auto& p : curve) {
      x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
    }
    const double sx = x1 > x0 ? x1 - x0 : 1.0, sy = y1 > y0 ? y1 - y0 : 1.0;
    const double span = kSize - 2 * kMargin;
    auto px = [&](const CurvePoint& p) {
      return std::pair<double, double>{kMargin + (p.x - x0) / sx * span,
                                       kSize - kMargin - (p.y - y0) / sy * span};
    };
    for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
      const auto [ax, ay] = px(curve[i]);
      const auto [bx, by] = px(curve[i + 1]);
      const int steps = static_cast<int>(std::ceil(std::max(std::abs(bx - ax), std::abs(by - ay)))) + 1;
      for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        put(static_cast<int>(std::lround(ax + t * (bx - ax))), static_cast<int>(std::lround(ay + t * (by - ay))),
            0.8, 0.1, 0.1);
      }
    }
  }
  write_png(path, img);
}

void write_report(const MetricReport& report, const fs::path& out_dir, const ReportEnvironment& env,
                  const json& resolved_config, bool plots) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(Errc::UnwritablePath, out_dir.string());
  json j = report.to_json();
  validate_report_json(j);
  j["environment"] = {{"artifact_version", env.artifact_version},
                      {"seed", env.seed},
                      {"config_digest", env.config_digest},
                      {"wall_time_s", env.wall_time_s}};
  j["config"] = resolved_config;
  {
    std::ofstream out(out_dir / "report.json");
    if (!out) throw Error(Errc::UnwritablePath, (out_dir / "report.json").string());
    out << j.dump(2) << "\n";
  }
  if (!report.curves.empty()) {
    std::ofstream csv(out_dir / "curves.csv");
    if (!csv) throw Error(Errc::UnwritablePath, (out_dir / "curves.csv").string());
    csv << "curve,x,y\n";
    char buf[96];
    for (const auto& [name, pts] : report.curves) {
      for (const auto& p : pts) {
        std::snprintf(buf, sizeof(buf), ",%.17g,%.17g\n", p.x, p.y);
        csv << name << buf;
      }
    }
  }
  if (plots) {
    for (const auto& [name, pts] : report.curves) write_curve_plot(out_dir / ("plot_" + name + ".png"), pts);
  }
}

// ---- command helpers -------------------------------------------------------------

namespace {

class Logger {
 public:
  Logger(std::ostream& err, const std::string& level) : err_(err) {
    static const std::map<std::string, int> kRank = {{"error", 0}, {"warn", 1}, {"info", 2}, {"debug", 3}};
    rank_ = kRank.at(level);
  }
  void info(const std::string& msg) const {
    if (rank_ >= 2) err_ << "[vfm] " << msg << "\n";
  }

 private:
  std::ostream& err_;
  int rank_ = 2;
};

// Marks an output directory as incomplete until the command finishes.
class RunDir {
 public:
  explicit RunDir(const fs::path& dir) : dir_(dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) throw Error(Errc::UnwritableOutputDir, dir_.string());
    std::ofstream(dir_ / "INCOMPLETE") << "run in progress or interrupted\n";
    if (!fs::exists(dir_ / "INCOMPLETE")) throw Error(Errc::UnwritableOutputDir, dir_.string());
  }
  void finish() { fs::remove(dir_ / "INCOMPLETE"); }
  const fs::path& path() const { return dir_; }

 private:
  fs::path dir_;
};

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::UnwritablePath, path.string());
  out << j.dump(2) << "\n";
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::MissingFile, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

Manifest open_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw Error(Errc::MissingFile, "manifest " + path.string());
  return load_manifest(path);
}

Encoder open_encoder(const fs::path& path) {
  if (!fs::exists(path)) throw Error(Errc::MissingFile, "encoder checkpoint " + path.string());
  return Encoder::load(path);
}

Mask resize_mask_nearest(const Mask& m, int size) {
  if (m.height == size && m.width == size) return m;
  Mask out(size, size);
  for (int y = 0; y < size; ++y) {
    const int sy = std::min(m.height - 1, static_cast<int>((y + 0.5) * m.height / size));
    for (int x = 0; x < size; ++x) {
      const int sx = std::min(m.width - 1, static_cast<int>((x + 0.5) * m.width / size));
      out.at(y, x) = m.at(sy, sx);
    }
  }
  return out;
}

struct TaskData {
  std::vector<Image> images;
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::vector<Mask> masks;
  int mask_classes = 2;
  std::vector<LandmarkSet> landmarks;
  std::vector<BiomarkerPanel> panels;
  std::vector<double> deltas;
  std::vector<int> outcomes;
};

TaskData load_task_data(const Manifest& m, HeadType type, const Encoder& enc) {
  const EncoderConfig& ec = enc.config();
  const int S = ec.image_size;
  TaskData d;
  auto missing = [](const ImageRecord& r, const char* what) {
    return Error(Errc::SchemaViolation, "record " + r.id + " has no " + what);
  };
  auto add_image = [&](const ImageRecord& r) {
    if (r.modality != enc.modality()) {
      throw Error(Errc::ModalityMismatch, "record " + r.id + " is " + std::string(modality_name(r.modality)) +
                                              ", encoder is " + std::string(modality_name(enc.modality())));
    }
    d.images.push_back(conform_image(m.load_image(r), ec));
    d.ids.push_back(r.id);
  };
  if (type == HeadType::FORECASTER) {
    if (m.pairs.empty()) throw Error(Errc::SchemaViolation, "manifest has no longitudinal pairs");
    for (const auto& p : m.pairs) {
      add_image(m.find(p.image_t0));
      d.deltas.push_back(p.delta_days);
      d.outcomes.push_back(p.outcome);
    }
    return d;
  }
  std::map<int, std::string> names;
  for (const auto& r : m.records) {
    switch (type) {
      case HeadType::CLASSIFIER:
        if (!r.labels) throw missing(r, "labels");
        d.labels.push_back(r.labels->class_index);
        names[r.labels->class_index] = r.labels->class_name;
        break;
      case HeadType::SEGMENTER: {
        if (!r.mask_path) throw missing(r, "mask_path");
        Mask mk = resize_mask_nearest(m.load_mask(r), S);
        for (auto v : mk.labels) d.mask_classes = std::max(d.mask_classes, static_cast<int>(v) + 1);
        d.masks.push_back(std::move(mk));
        break;
      }
      case HeadType::LANDMARK: {
        if (!r.landmarks) throw missing(r, "landmarks");
        LandmarkSet s = *r.landmarks;
        for (auto& p : s.points) {
          p.x *= static_cast<double>(S) / r.width;
          p.y *= static_cast<double>(S) / r.height;
        }
        d.landmarks.push_back(s);
        break;
      }
      case HeadType::REGRESSOR:
        if (!r.biomarkers) throw missing(r, "biomarkers");
        d.panels.push_back(*r.biomarkers);
        break;
      case HeadType::FORECASTER:
        break;
    }
    add_image(r);
  }
  if (type == HeadType::CLASSIFIER && !names.empty()) {
    d.class_names = default_class_names(std::max(2, names.rbegin()->first + 1));
    for (const auto& [c, n] : names) d.class_names[static_cast<std::size_t>(c)] = n;
  }
  if (d.images.empty()) throw Error(Errc::EmptyManifest, "no usable records for the task");
  return d;
}

// Type-erased head so finetune and eval share one code path per task.
struct AnyHead {
  HeadType type = HeadType::CLASSIFIER;
  ClassifierHead cls;
  SegmenterHead seg;
  LandmarkHead lm;
  RegressorHead reg;
  ForecastHead fc;

  nn::ParamRefs params() {
    switch (type) {
      case HeadType::CLASSIFIER: return cls.params();
      case HeadType::SEGMENTER: return seg.params();
      case HeadType::LANDMARK: return lm.params();
      case HeadType::REGRESSOR: return reg.params();
      case HeadType::FORECASTER: return fc.params();
    }
    return {};
  }
  Checkpoint to_checkpoint() const {
    switch (type) {
      case HeadType::CLASSIFIER: return cls.to_checkpoint();
      case HeadType::SEGMENTER: return seg.to_checkpoint();
      case HeadType::LANDMARK: return lm.to_checkpoint();
      case HeadType::REGRESSOR: return reg.to_checkpoint();
      case HeadType::FORECASTER: return fc.to_checkpoint();
    }
    return {};
  }
  static AnyHead from_checkpoint(const Checkpoint& ck) {
    const auto t = parse_head_type(ck.meta.value("head_type", ""));
    if (!t || ck.meta.value("kind", "") != "head") {
      throw Error(Errc::CorruptCheckpoint, "not a head checkpoint");
    }
    AnyHead h;
    h.type = *t;
    switch (*t) {
      case HeadType::CLASSIFIER: h.cls = ClassifierHead::from_checkpoint(ck); break;
      case HeadType::SEGMENTER: h.seg = SegmenterHead::from_checkpoint(ck); break;
      case HeadType::LANDMARK: h.lm = LandmarkHead::from_checkpoint(ck); break;
      case HeadType::REGRESSOR: h.reg = RegressorHead::from_checkpoint(ck); break;
      case HeadType::FORECASTER: h.fc = ForecastHead::from_checkpoint(ck); break;
    }
    return h;
  }
};

AnyHead make_head(const TaskConfig& tc, const TaskData& d, const Encoder& enc, std::uint64_t seed) {
  const EncoderConfig& ec = enc.config();
  const int D = ec.embed_dim, P = ec.patch_size, G = ec.image_size / ec.patch_size;
  AnyHead h;
  h.type = tc.type;
  switch (tc.type) {
    case HeadType::CLASSIFIER: h.cls = ClassifierHead(D, d.class_names, tc.hidden, seed); break;
    case HeadType::SEGMENTER: h.seg = SegmenterHead(D, P, G, d.mask_classes, tc.hidden, seed); break;
    case HeadType::LANDMARK: h.lm = LandmarkHead(D, P, G, tc.hidden, seed); break;
    case HeadType::REGRESSOR: {
      const std::string id = d.panels.empty() ? default_panel_spec().id : d.panels[0].panel_spec_id;
      h.reg = RegressorHead(D, panel_spec(id), tc.hidden, seed);
      h.reg.fit_standardization(d.panels);
      break;
    }
    case HeadType::FORECASTER: h.fc = ForecastHead(D, seed); break;
  }
  return h;
}

SampleLoss make_objective(AnyHead& h, const TaskData& d, const TaskConfig& tc,
                          std::vector<std::vector<double>>& reg_targets) {
  switch (h.type) {
    case HeadType::CLASSIFIER: return classifier_objective(h.cls, d.labels);
    case HeadType::SEGMENTER: return segmenter_objective(h.seg, d.masks, tc.dice_weight);
    case HeadType::LANDMARK: return landmark_objective(h.lm, d.landmarks);
    case HeadType::REGRESSOR:
      reg_targets.clear();
      for (const auto& p : d.panels) reg_targets.push_back(h.reg.standardize(p));
      return regressor_objective(h.reg, reg_targets);
    case HeadType::FORECASTER: return forecast_objective(h.fc, d.deltas, d.outcomes);
  }
  throw Error(Errc::ConfigError, "unsupported task");
}

std::vector<double> column(const Tensor& t, std::size_t c) {
  std::vector<double> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) out[i] = t(i, c);
  return out;
}

template <typename T>
std::vector<T> pick(const std::vector<T>& v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

MetricReport evaluate(AnyHead& h, const Encoder& enc, const TaskData& d, const TaskConfig& tc,
                      std::uint64_t seed) {
  MetricReport r;
  r.task = std::string(head_type_name(h.type));
  r.n = d.images.size();
  r.seed = seed;
  std::vector<EmbeddingSet> emb;
  for (const Image& img : d.images) emb.push_back(enc.encode(img));
  const std::size_t n = emb.size();
  auto add_ci = [&](const std::string& name, const IndexMetric& metric) {
    if (tc.bootstrap > 0 && n >= 2) r.ci[name] = bootstrap_ci(metric, n, tc.bootstrap, 0.95, seed);
  };

  switch (h.type) {
    case HeadType::CLASSIFIER: {
      const int K = h.cls.num_classes();
      Tensor probs(n, static_cast<std::size_t>(K));
      std::vector<int> preds(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto p = h.cls.classify(emb[i]);
        std::copy(p.begin(), p.end(), probs.row(i).begin());
        preds[i] = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
      }
      r.metrics["accuracy"] = accuracy(preds, d.labels);
      r.confusion["classes"] = confusion_matrix(preds, d.labels, K);
      if (K == 2) {
        r.mode = "binary";
        const auto s = column(probs, 1);
        r.metrics["f1"] = f1(preds, d.labels);
        if (std::set<int>(d.labels.begin(), d.labels.end()).size() == 2) {
          r.metrics["auc"] = roc_auc(s, d.labels);
          const PrResult pr = pr_curve_and_ap(s, d.labels);
          r.metrics["ap"] = pr.ap;
          r.curves["roc"] = roc_curve(s, d.labels);
          r.curves["pr"] = pr.curve;
          add_ci("auc", [&](std::span<const std::size_t> idx) {
            return roc_auc(pick(s, idx), pick(d.labels, idx));
          });
        }
      } else {
        r.mode = "ovr";
        r.metrics["macro_f1"] = macro_f1(preds, d.labels, K);
        auto macro = [&](std::span<const std::size_t> idx) {
          double total = 0.0;
          int used = 0;
          for (int c = 0; c < K; ++c) {
            std::vector<double> s;
            std::vector<int> y;
            for (std::size_t i : idx) s.push_back(probs(i, static_cast<std::size_t>(c))), y.push_back(d.labels[i] == c);
            const int pos = static_cast<int>(std::count(y.begin(), y.end(), 1));
            if (pos == 0 || pos == static_cast<int>(y.size())) continue;
            total += roc_auc(s, y);
            ++used;
          }
          if (used == 0) throw Error(Errc::SingleClass, "no class has both outcomes");
          return total / used;
        };
        std::vector<std::size_t> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = i;
        for (int c = 0; c < K; ++c) {
          const auto s = column(probs, static_cast<std::size_t>(c));
          std::vector<int> y(n);
          for (std::size_t i = 0; i < n; ++i) y[i] = d.labels[i] == c;
          const int pos = static_cast<int>(std::count(y.begin(), y.end(), 1));
          if (pos == 0 || pos == static_cast<int>(n)) continue;
          const std::string name = h.cls.label_space[static_cast<std::size_t>(c)];
          r.metrics["auc_" + name] = roc_auc(s, y);
          r.curves["roc_" + name] = roc_curve(s, y);
        }
        r.metrics["auc_macro"] = macro(all);
        add_ci("auc_macro", macro);
      }
      break;
    }
    case HeadType::SEGMENTER: {
      const int C = h.seg.num_classes();
      std::vector<std::vector<double>> per_class(static_cast<std::size_t>(C));
      std::vector<double> per_image(n);
      for (std::size_t i = 0; i < n; ++i) {
        const Mask pred = argmax_mask(h.seg.segment(emb[i], enc.config().image_size));
        double sum = 0.0;
        for (int c = 1; c < C; ++c) {
          const double v = dice(pred, d.masks[i], c);
          per_class[static_cast<std::size_t>(c)].push_back(v);
          sum += v;
        }
        per_image[i] = sum / std::max(1, C - 1);
      }
      for (int c = 1; c < C; ++c) r.metrics["dice_" + std::to_string(c)] = mean_of(per_class[static_cast<std::size_t>(c)]);
      r.metrics["dice_mean"] = mean_of(per_image);
      add_ci("dice_mean", [&](std::span<const std::size_t> idx) { return mean_of(pick(per_image, idx)); });
      break;
    }
    case HeadType::LANDMARK: {
      std::vector<LandmarkSet> preds;
      std::vector<double> per_image;
      for (std::size_t i = 0; i < n; ++i) {
        preds.push_back(h.lm.detect_landmarks(emb[i], enc.config().image_size));
        per_image.push_back(landmark_error(preds.back(), d.landmarks[i]).mean);
      }
      const LandmarkError e = landmark_error(preds, d.landmarks);
      r.metrics["mean_error_px"] = e.mean;
      for (int k = 0; k < 3; ++k) r.metrics["error_point_" + std::to_string(k + 1)] = e.per_point[static_cast<std::size_t>(k)];
      add_ci("mean_error_px", [&](std::span<const std::size_t> idx) { return mean_of(pick(per_image, idx)); });
      break;
    }
    case HeadType::REGRESSOR: {
      std::vector<BiomarkerPanel> preds;
      for (std::size_t i = 0; i < n; ++i) preds.push_back(h.reg.regress_biomarkers(emb[i]));
      const BiomarkerAccuracy acc = biomarker_accuracy(preds, d.panels);
      r.metrics["accuracy_mean"] = acc.mean;
      r.metrics["accuracy_std"] = acc.stddev;
      std::vector<double> r2s;
      for (const auto& name : h.reg.names) {
        std::vector<double> p, t;
        for (std::size_t i = 0; i < n; ++i) p.push_back(preds[i].values.at(name)), t.push_back(d.panels[i].values.at(name));
        const double v = r_squared(p, t);
        r2s.push_back(v);
        if (std::find(std::begin(kNamedBiomarkers), std::end(kNamedBiomarkers), name) != std::end(kNamedBiomarkers)) {
          r.metrics["r2_" + name] = v;
          add_ci("r2_" + name, [&, p, t](std::span<const std::size_t> idx) {
            return r_squared(pick(p, idx), pick(t, idx));
          });
        }
      }
      r.metrics["r2_mean"] = mean_of(r2s);
      break;
    }
    case HeadType::FORECASTER: {
      r.mode = "binary";
      std::vector<double> s(n);
      std::vector<int> preds(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = h.fc.forecast(emb[i], d.deltas[i]);
        preds[i] = s[i] >= 0.5;
      }
      r.metrics["f1"] = f1(preds, d.outcomes);
      r.metrics["accuracy"] = accuracy(preds, d.outcomes);
      if (std::set<int>(d.outcomes.begin(), d.outcomes.end()).size() == 2) {
        r.metrics["auc"] = roc_auc(s, d.outcomes);
        r.curves["roc"] = roc_curve(s, d.outcomes);
      }
      add_ci("f1", [&](std::span<const std::size_t> idx) { return f1(pick(preds, idx), pick(d.outcomes, idx)); });
      break;
    }
  }
  return r;
}

// ---- commands ----------------------------------------------------------------------

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
};

void finish_report(const Context& ctx, MetricReport report, RunDir& dir, const json& resolved,
                   std::uint64_t seed, bool plots) {
  const std::string digest = config_digest(resolved);
  report.config_digest = digest;
  report.seed = seed;
  write_json_file(dir.path() / "config.resolved.json", resolved);
  write_report(report, dir.path(), {kArtifactVersion, seed, digest, seconds_since(ctx.t0)}, resolved, plots);
}

int cmd_gen_data(const Context& ctx, const fs::path& spec_path, std::optional<std::uint64_t> seed,
                 const fs::path& out) {
  std::ifstream in(spec_path);
  if (!in) throw Error(Errc::ConfigError, "cannot read spec " + spec_path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, spec_path.string() + ": " + e.what());
  }
  ToyDataSpec spec = toy_spec_from_json(j);
  if (seed) spec.seed = *seed;
  RunDir dir(out);
  const Manifest m = generate_toy_dataset(spec, out);
  const json resolved = {{"command", "gen-data"}, {"spec", toy_spec_to_json(spec)}};
  json run = {{"config", resolved},
              {"config_digest", config_digest(resolved)},
              {"records", m.records.size()},
              {"pairs", m.pairs.size()},
              {"manifest_digest", m.digest()}};
  write_json_file(out / "config.resolved.json", resolved);
  write_json_file(out / "run.json", run);
  dir.finish();
  ctx.out << (out / "manifest.jsonl").string() << "\n";
  return 0;
}

int cmd_pretrain(const Context& ctx, const fs::path& config_path, std::optional<fs::path> out) {
  const RunConfig rc = load_run_config(config_path);
  Logger log(ctx.err, rc.log_level);
  if (!out) out = rc.out_dir;
  if (!out) throw Error(Errc::ConfigError, "pretrain needs --out or out_dir");
  if (!rc.data.contains("manifest")) throw Error(Errc::ConfigError, "missing key 'data.manifest'");
  const EncoderConfig ec = encoder_config_from_json(rc.encoder);
  SelfDistillConfig pc = self_distill_config_from_json(rc.pretrain);
  if (!rc.pretrain.contains("seed")) pc.seed = rc.seed;
  const Manifest m = open_manifest(rc.data["manifest"].get<std::string>());
  RunDir dir(*out);
  log.info("pretraining on " + std::to_string(m.records.size()) + " images for " + std::to_string(pc.steps) + " steps");
  const PretrainResult res = pretrain(m, ec, pc, *out);

  std::vector<Image> probe;
  for (std::size_t i = 0; i < m.records.size() && i < 64; ++i) {
    probe.push_back(conform_image(m.load_image(m.records[i]), ec));
  }
  const auto& h = res.state.loss_history;
  MetricReport r;
  r.task = "PRETRAIN";
  r.n = m.records.size();
  const std::size_t w = std::min<std::size_t>(20, h.size());
  if (w > 0) {
    r.metrics["loss_first20"] = mean_of(std::span<const double>(h.data(), w));
    r.metrics["loss_last20"] = mean_of(std::span<const double>(h.data() + h.size() - w, w));
  }
  r.metrics["projection_std"] = probe.size() >= 2 ? projection_std(res.state, probe, pc) : 0.0;
  r.metrics["checkpoints"] = static_cast<double>(res.checkpoint_paths.size());
  for (std::size_t i = 0; i < h.size(); ++i) r.curves["loss"].push_back({static_cast<double>(i + 1), h[i]});
  json resolved = {{"command", "pretrain"},
                   {"manifest_digest", m.digest()},
                   {"encoder", encoder_config_to_json(ec)},
                   {"pretrain", self_distill_config_to_json(pc)}};
  finish_report(ctx, r, dir, resolved, pc.seed, rc.plots);
  dir.finish();
  ctx.out << res.final_checkpoint->string() << "\n";
  return 0;
}

int cmd_probe(const Context& ctx, const fs::path& enc_path, const fs::path& man_path, const std::string& task,
              std::optional<int> k, int episodes, const fs::path& out) {
  if (parse_task_name(task) != HeadType::CLASSIFIER) {
    throw Error(Errc::ConfigError, "probe supports --task CLASSIFY only");
  }
  const Encoder enc = open_encoder(enc_path);
  const Manifest m = open_manifest(man_path);
  ProbeConfig pc;
  pc.k_shot = k;
  pc.episodes = episodes;
  pc.validate();
  RunDir dir(out);
  const ProbeResult pr = probe_encoder(enc, m, pc, out / "feature_cache");
  if (pr.encoder_digest_before != pr.encoder_digest_after) {
    throw Error(Errc::ConfigError, "encoder changed during probing");
  }
  MetricReport r;
  r.task = "PROBE";
  r.n = m.records.size();
  int n_classes = 0;
  for (const auto& rec : m.records) {
    if (rec.labels) n_classes = std::max(n_classes, rec.labels->class_index + 1);
  }
  r.mode = n_classes > 2 ? "ovr" : "binary";
  r.metrics["auc_mean"] = pr.auc_mean;
  r.metrics["auc_std"] = pr.auc_std;
  r.metrics["accuracy_mean"] = pr.accuracy_mean;
  r.metrics["episodes"] = static_cast<double>(pr.episodes.size());
  if (k) r.metrics["k_shot"] = *k;
  write_json_file(out / "probe.json", pr.to_json());
  const json resolved = {{"command", "probe"},
                         {"task", "CLASSIFY"},
                         {"encoder_digest", enc.digest()},
                         {"manifest_digest", m.digest()},
                         {"probe", probe_config_to_json(pc)}};
  finish_report(ctx, r, dir, resolved, pc.seed, false);
  dir.finish();
  ctx.out << (out / "report.json").string() << "\n";
  return 0;
}

int cmd_finetune(const Context& ctx, const fs::path& enc_path, const std::optional<fs::path>& head_path,
                 const fs::path& man_path, const std::string& task, const fs::path& out) {
  const HeadType type = parse_task_name(task);
  Encoder enc = open_encoder(enc_path);
  const Manifest m = open_manifest(man_path);
  TaskConfig tc;
  std::uint64_t seed = 0;
  std::string log_level = "info";
  bool plots = false;
  std::optional<AnyHead> initial;
  if (head_path) {
    if (head_path->extension() == ".json") {
      const RunConfig rc = load_run_config(*head_path);
      tc = task_config_from_json(rc.task);
      if (rc.task.contains("type") && tc.type != type) {
        throw Error(Errc::ConfigError, "task.type disagrees with --task");
      }
      seed = rc.seed;
      log_level = rc.log_level;
      plots = rc.plots;
      if (!(rc.task.contains("train") && rc.task["train"].contains("seed"))) tc.train.seed = seed;
    } else {
      if (!fs::exists(*head_path)) throw Error(Errc::MissingFile, "head checkpoint " + head_path->string());
      initial = AnyHead::from_checkpoint(load_checkpoint(*head_path));
      if (initial->type != type) throw Error(Errc::ConfigError, "head checkpoint is not a " + task + " head");
    }
  }
  tc.type = type;
  Logger log(ctx.err, log_level);
  const TaskData d = load_task_data(m, type, enc);
  RunDir dir(out);
  AnyHead head = initial ? *initial : make_head(tc, d, enc, seed);
  std::vector<std::vector<double>> reg_targets;
  const SampleLoss objective = make_objective(head, d, tc, reg_targets);
  log.info("training " + task + " head on " + std::to_string(d.images.size()) + " samples");
  const TrainResult tr = train_head(enc, d.images, head.params(), objective, tc.train);

  Checkpoint hc = head.to_checkpoint();
  hc.meta["task_config"] = task_config_to_json(tc);
  save_checkpoint(out / "head.ckpt", hc);
  enc.save(out / "encoder.ckpt");
  {
    std::ofstream csv(out / "loss_history.csv");
    if (!csv) throw Error(Errc::UnwritablePath, (out / "loss_history.csv").string());
    csv << "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < tr.loss_history.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i + 1, tr.loss_history[i]);
      csv << buf;
    }
  }
  MetricReport r;
  r.task = std::string(head_type_name(type));
  r.n = d.images.size();
  r.metrics["loss_first"] = tr.loss_history.front();
  r.metrics["loss_final"] = tr.loss_history.back();
  for (std::size_t i = 0; i < tr.loss_history.size(); ++i) {
    r.curves["train_loss"].push_back({static_cast<double>(i + 1), tr.loss_history[i]});
  }
  const json resolved = {{"command", "finetune"},
                         {"task", task_config_to_json(tc)},
                         {"encoder_digest_in", file_digest(enc_path)},
                         {"manifest_digest", m.digest()},
                         {"seed", seed}};
  finish_report(ctx, r, dir, resolved, seed, plots);
  dir.finish();
  ctx.out << (out / "head.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const Context& ctx, const fs::path& enc_path, const fs::path& head_path, const fs::path& man_path,
             const std::string& task, const fs::path& out) {
  const HeadType type = parse_task_name(task);
  const Encoder enc = open_encoder(enc_path);
  if (!fs::exists(head_path)) throw Error(Errc::MissingFile, "head checkpoint " + head_path.string());
  const Checkpoint hc = load_checkpoint(head_path);
  AnyHead head = AnyHead::from_checkpoint(hc);
  if (head.type != type) throw Error(Errc::ConfigError, "head checkpoint is not a " + task + " head");
  TaskConfig tc;
  if (hc.meta.contains("task_config")) tc = task_config_from_json(hc.meta["task_config"]);
  tc.type = type;
  const Manifest m = open_manifest(man_path);
  const TaskData d = load_task_data(m, type, enc);
  RunDir dir(out);
  MetricReport r = evaluate(head, enc, d, tc, 0);
  const json resolved = {{"command", "eval"},
                         {"task", std::string(head_type_name(type))},
                         {"encoder_digest", enc.digest()},
                         {"head_digest", nn::params_digest(nn::as_const(head.params()))},
                         {"manifest_digest", m.digest()},
                         {"bootstrap", tc.bootstrap}};
  finish_report(ctx, r, dir, resolved, 0, false);
  dir.finish();
  ctx.out << (out / "report.json").string() << "\n";
  return 0;
}

std::vector<fs::path> expand_series(const std::vector<std::string>& items) {
  std::vector<fs::path> out;
  for (const auto& item : items) {
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (part.empty()) continue;
      const fs::path p(part);
      if (fs::is_directory(p)) {
        std::vector<fs::path> found;
        for (const auto& e : fs::directory_iterator(p)) {
          if (e.path().extension() == ".ckpt") found.push_back(e.path());
        }
        std::vector<std::pair<long long, fs::path>> keyed;
        for (const auto& f : found) keyed.emplace_back(Encoder::load(f).train_step(), f);
        std::sort(keyed.begin(), keyed.end());
        // encoder_final repeats the last periodic checkpoint's step; keep one per step.
        for (std::size_t i = 0; i < keyed.size(); ++i) {
          if (i == 0 || keyed[i].first != keyed[i - 1].first) out.push_back(keyed[i].second);
        }
      } else {
        if (!fs::exists(p)) throw Error(Errc::MissingFile, "checkpoint " + p.string());
        out.push_back(p);
      }
    }
  }
  return out;
}

int cmd_explain(const Context& ctx, const std::optional<fs::path>& enc_path,
                const std::vector<std::string>& series_items, const std::optional<fs::path>& image_path,
                const std::optional<fs::path>& man_path, int layer, const fs::path& out) {
  if (!enc_path && series_items.empty()) throw Error(Errc::ConfigError, "explain needs --encoder or --ckpt-series");
  if (!image_path && !man_path) throw Error(Errc::ConfigError, "explain needs --image or --manifest");
  struct Item {
    std::string id;
    Image image;
    std::optional<Mask> mask;
  };
  std::vector<Item> items;
  Manifest m;
  if (man_path) {
    m = open_manifest(*man_path);
    for (const auto& r : m.records) {
      Item it{r.id, m.load_image(r), std::nullopt};
      if (r.mask_path) it.mask = m.load_mask(r);
      items.push_back(std::move(it));
    }
    if (items.empty()) throw Error(Errc::EmptyManifest, man_path->string());
  } else {
    if (!fs::exists(*image_path)) throw Error(Errc::MissingFile, "image " + image_path->string());
    items.push_back({image_path->stem().string(), read_png(*image_path), std::nullopt});
  }
  const std::vector<fs::path> series = expand_series(series_items);
  RunDir dir(out);
  MetricReport r;
  r.task = "EXPLAIN";
  json resolved = {{"command", "explain"}, {"layer", layer}};
  double worst = 0.0;
  auto row_error = [&](const AttentionMapSet& a) {
    const std::size_t N = a.merged.size();
    for (int h = 0; h < a.heads(); ++h) {
      double s = 0.0;
      for (std::size_t p = 0; p < N; ++p) s += a.per_head[static_cast<std::size_t>(h) * N + p];
      worst = std::max(worst, std::abs(s - 1.0));
    }
  };
  if (enc_path) {
    const Encoder enc = open_encoder(*enc_path);
    resolved["encoder_digest"] = enc.digest();
    for (const auto& it : items) {
      const Image img = conform_image(it.image, enc.config());
      const AttentionMapSet a = head_attention(enc, img, layer, MergeMode::MEAN, true, it.id);
      row_error(a);
      export_overlay(img, a.merged, out / ("overlay_" + it.id + ".png"));
      export_attention_arrays(a, out / ("attention_" + it.id));
    }
    r.n = items.size();
  } else {
    const Encoder first = Encoder::load(series.front());
    const Item& it = items.front();
    const Image img = conform_image(it.image, first.config());
    const auto evo = attention_evolution(series, img, layer, MergeMode::MEAN, it.id);
    std::vector<double> mass;
    std::optional<std::vector<bool>> fg;
    if (it.mask) {
      Mask mk = resize_mask_nearest(*it.mask, first.config().image_size);
      fg = foreground_patches(mk, first.config().patch_size);
    }
    json steps = json::array();
    for (const auto& a : evo) {
      row_error(a);
      mass.push_back(fg ? foreground_mass(a, *fg) : std::nan(""));
      export_overlay(img, a.merged, out / ("overlay_" + it.id + "_step" + std::to_string(a.train_step) + ".png"));
      r.curves["foreground_mass"].push_back({static_cast<double>(a.train_step), fg ? mass.back() : 0.0});
      steps.push_back(a.train_step);
    }
    if (!fg) r.curves.erase("foreground_mass");
    write_evolution_csv(out / "evolution.csv", evo, mass);
    resolved["checkpoint_steps"] = steps;
    r.n = evo.size();
  }
  r.metrics["max_row_sum_error"] = worst;
  if (man_path) resolved["manifest_digest"] = m.digest();
  finish_report(ctx, r, dir, resolved, 0, false);
  dir.finish();
  ctx.out << (out / "report.json").string() << "\n";
  return 0;
}

int cmd_sweep(const Context& ctx, const fs::path& config_path, int jobs, std::optional<fs::path> out) {
  const RunConfig rc = load_run_config(config_path);
  Logger log(ctx.err, rc.log_level);
  if (!out) out = rc.out_dir;
  if (!out) throw Error(Errc::ConfigError, "sweep-synthetic needs --out or out_dir");
  json sj = rc.sweep;
  if (!sj.contains("seeds")) sj["seeds"] = {rc.seed, rc.seed + 1};
  const SweepConfig sc = sweep_config_from_json(sj);
  RunDir dir(*out);
  log.info("sweeping " + std::to_string(sc.ratios.size()) + " ratios x " + std::to_string(sc.seeds.size()) + " seeds");
  SweepOptions opt;
  opt.jobs = jobs;
  const SweepRun run = run_ratio_sweep(sc, *out, opt);
  const json resolved = {{"command", "sweep-synthetic"}, {"sweep", sweep_config_to_json(sc)}};
  write_json_file(*out / "config.resolved.json", resolved);
  log.info("best ratio " + run.result.best().ratio_label() + " (reported, not asserted)");
  dir.finish();
  ctx.out << (*out / "sweep.json").string() << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"vfm: toy ophthalmic foundation-model pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kArtifactVersion);

  std::string spec, config, encoder, head, manifest, task, image;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> k;
  int episodes = 5, jobs = 1, layer = -1;
  std::vector<std::string> series;

  auto* gen = app.add_subcommand("gen-data", "generate a procedural toy dataset");
  gen->add_option("--spec", spec, "ToyDataSpec JSON")->required();
  gen->add_option("--seed", seed, "overrides the spec seed");
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "self-distillation pretraining");
  pre->add_option("--config", config, "run config JSON")->required();
  pre->add_option("--out", out_dir, "output directory");

  auto* probe = app.add_subcommand("probe", "linear probe on frozen features");
  probe->add_option("--encoder", encoder, "encoder checkpoint")->required();
  probe->add_option("--manifest", manifest, "labelled manifest")->required();
  probe->add_option("--task", task, "CLASSIFY")->required();
  probe->add_option("--k", k, "shots per class (omit for full)");
  probe->add_option("--episodes", episodes, "episodes")->capture_default_str();
  probe->add_option("--out", out_dir, "output directory")->required();

  auto* ft = app.add_subcommand("finetune", "train a task head");
  ft->add_option("--encoder", encoder, "encoder checkpoint")->required();
  ft->add_option("--head", head, "head checkpoint to continue, or run config JSON with a task section");
  ft->add_option("--manifest", manifest, "training manifest")->required();
  ft->add_option("--task", task, "CLASSIFY|SEGMENT|LANDMARK|BIOMARKER|FORECAST")->required();
  ft->add_option("--out", out_dir, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a task head");
  ev->add_option("--encoder", encoder, "encoder checkpoint")->required();
  ev->add_option("--head", head, "head checkpoint")->required();
  ev->add_option("--manifest", manifest, "evaluation manifest")->required();
  ev->add_option("--task", task, "CLASSIFY|SEGMENT|LANDMARK|BIOMARKER|FORECAST")->required();
  ev->add_option("--out", out_dir, "output directory")->required();

  auto* sw = app.add_subcommand("sweep-synthetic", "real:synthetic ratio sweep");
  sw->add_option("--config", config, "run config JSON with a sweep section")->required();
  sw->add_option("--jobs", jobs, "parallel cells")->capture_default_str();
  sw->add_option("--out", out_dir, "output directory");

  auto* ex = app.add_subcommand("explain", "attention maps and overlays");
  auto* ex_enc = ex->add_option("--encoder", encoder, "encoder checkpoint");
  auto* ex_series = ex->add_option("--ckpt-series", series, "checkpoint files or a directory (ordered by train_step)");
  ex_enc->excludes(ex_series);
  auto* ex_img = ex->add_option("--image", image, "PNG image");
  auto* ex_man = ex->add_option("--manifest", manifest, "manifest; every record is explained");
  ex_img->excludes(ex_man);
  ex->add_option("--layer", layer, "block index, -1 for the last")->capture_default_str();
  ex->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  Context ctx{out, err};
  try {
    if (*gen) return cmd_gen_data(ctx, spec, seed, out_dir);
    if (*pre) return cmd_pretrain(ctx, config, out_dir.empty() ? std::nullopt : std::optional<fs::path>(out_dir));
    if (*probe) return cmd_probe(ctx, encoder, manifest, task, k, episodes, out_dir);
    if (*ft) {
      return cmd_finetune(ctx, encoder, head.empty() ? std::nullopt : std::optional<fs::path>(head), manifest,
                          task, out_dir);
    }
    if (*ev) return cmd_eval(ctx, encoder, head, manifest, task, out_dir);
    if (*sw) return cmd_sweep(ctx, config, jobs, out_dir.empty() ? std::nullopt : std::optional<fs::path>(out_dir));
    if (*ex) {
      return cmd_explain(ctx, encoder.empty() ? std::nullopt : std::optional<fs::path>(encoder), series,
                         image.empty() ? std::nullopt : std::optional<fs::path>(image),
                         manifest.empty() ? std::nullopt : std::optional<fs::path>(manifest), layer, out_dir);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const json::exception& e) {
    err << "error: ConfigError: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace vfm
