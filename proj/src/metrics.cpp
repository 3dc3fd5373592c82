#include "vfm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vfm/error.hpp"
#include "vfm/rng.hpp"

namespace vfm {

using nlohmann::json;

namespace {

void check_binary(std::span<const double> scores, std::span<const int> labels, const char* fn) {
  if (scores.size() != labels.size()) {
    throw Error(Errc::ShapeMismatch, std::string(fn) + ": scores/labels length differ");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw Error(Errc::OutOfRangeClass, std::string(fn) + ": label not 0/1");
  }
}

// Indices sorted by descending score.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

// Cumulative (tp, fp) at the end of each group of tied scores, descending.
std::vector<std::pair<long long, long long>> threshold_counts(std::span<const double> scores,
                                                              std::span<const int> labels) {
  const auto idx = descending(scores);
  std::vector<std::pair<long long, long long>> out;
  long long tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    (labels[idx[i]] ? tp : fp) += 1;
    if (i + 1 == idx.size() || scores[idx[i + 1]] != scores[idx[i]]) out.emplace_back(tp, fp);
  }
  return out;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_binary(scores, labels, "roc_auc");
  const long long pos = std::count(labels.begin(), labels.end(), 1);
  const long long neg = static_cast<long long>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw Error(Errc::SingleClass, "roc_auc needs both classes");
  // Walk ascending score groups: each positive beats every negative in lower
  // groups and ties with negatives in its own group. Counted in half-units.
  auto idx = descending(scores);
  std::reverse(idx.begin(), idx.end());
  long long neg_below = 0, twice_wins = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    long long gp = 0, gn = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      (labels[idx[j]] ? gp : gn) += 1;
      ++j;
    }
    twice_wins += gp * (2 * neg_below + gn);
    neg_below += gn;
    i = j;
  }
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_binary(scores, labels, "roc_curve");
  const long long pos = std::count(labels.begin(), labels.end(), 1);
  const long long neg = static_cast<long long>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw Error(Errc::SingleClass, "roc_curve needs both classes");
  std::vector<CurvePoint> out{{0.0, 0.0}};
  for (const auto& [tp, fp] : threshold_counts(scores, labels)) {
    out.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos});
  }
  return out;
}

PrResult pr_curve_and_ap(std::span<const double> scores, std::span<const int> labels) {
  check_binary(scores, labels, "pr_curve_and_ap");
  const long long pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0) throw Error(Errc::NoPositives, "pr_curve_and_ap needs a positive label");
  PrResult r;
  double prev_recall = 0.0;
  for (const auto& [tp, fp] : threshold_counts(scores, labels)) {
    const double recall = static_cast<double>(tp) / pos;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    r.ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    r.curve.push_back({recall, precision});
  }
  return r;
}

F1Stats f1_stats(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw Error(Errc::ShapeMismatch, "f1: length mismatch");
  long long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == 1, y = labels[i] == 1;
    tp += p && y;
    fp += p && !y;
    fn += !p && y;
  }
  F1Stats s;
  s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

double f1(std::span<const int> preds, std::span<const int> labels) {
  return f1_stats(preds, labels).f1;
}

double macro_f1(std::span<const int> preds, std::span<const int> labels, int k) {
  if (preds.size() != labels.size()) throw Error(Errc::ShapeMismatch, "macro_f1: length mismatch");
  double total = 0.0;
  std::vector<int> p(preds.size()), y(labels.size());
  for (int c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < preds.size(); ++i) {
      p[i] = preds[i] == c;
      y[i] = labels[i] == c;
    }
    total += f1(p, y);
  }
  return total / k;
}

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw Error(Errc::ShapeMismatch, "accuracy: length mismatch");
  if (preds.empty()) return 0.0;
  long long hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

std::vector<std::vector<long long>> confusion_matrix(std::span<const int> preds,
                                                     std::span<const int> labels, int k) {
  if (preds.size() != labels.size()) throw Error(Errc::ShapeMismatch, "confusion: length mismatch");
  std::vector<std::vector<long long>> m(k, std::vector<long long>(k, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= k || labels[i] < 0 || labels[i] >= k) {
      throw Error(Errc::OutOfRangeClass, "confusion_matrix: value outside [0, " +
                                             std::to_string(k) + ") at index " + std::to_string(i));
    }
    ++m[labels[i]][preds[i]];
  }
  return m;
}

double dice(const Mask& a, const Mask& b, int c) {
  if (a.height != b.height || a.width != b.width) {
    throw Error(Errc::ShapeMismatch, "dice: mask shapes differ");
  }
  long long na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const bool x = a.labels[i] == c, y = b.labels[i] == c;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

LandmarkError landmark_error(const LandmarkSet& pred, const LandmarkSet& truth) {
  LandmarkError e;
  for (int k = 0; k < 3; ++k) {
    e.per_point[k] = std::hypot(pred.points[k].x - truth.points[k].x,
                                pred.points[k].y - truth.points[k].y);
    e.mean += e.per_point[k] / 3.0;
  }
  return e;
}

LandmarkError landmark_error(std::span<const LandmarkSet> preds,
                             std::span<const LandmarkSet> truths) {
  if (preds.size() != truths.size() || preds.empty()) {
    throw Error(Errc::CountMismatch, "landmark_error: " + std::to_string(preds.size()) +
                                         " predictions vs " + std::to_string(truths.size()));
  }
  LandmarkError total;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const LandmarkError e = landmark_error(preds[i], truths[i]);
    for (int k = 0; k < 3; ++k) total.per_point[k] += e.per_point[k];
    total.mean += e.mean;
  }
  const double n = static_cast<double>(preds.size());
  for (double& v : total.per_point) v /= n;
  total.mean /= n;
  return total;
}

BiomarkerAccuracy biomarker_accuracy(std::span<const BiomarkerPanel> preds,
                                     std::span<const BiomarkerPanel> truths, double rel_tol,
                                     double abs_tol) {
  if (preds.size() != truths.size() || preds.empty()) {
    throw Error(Errc::PanelMismatch, "biomarker_accuracy: sample counts differ or empty");
  }
  BiomarkerAccuracy out;
  for (const auto& [name, _] : truths[0].values) out.per_biomarker[name] = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].values.size() != truths[i].values.size()) {
      throw Error(Errc::PanelMismatch, "biomarker_accuracy: panel sizes differ");
    }
    for (const auto& [name, t] : truths[i].values) {
      const auto it = preds[i].values.find(name);
      const auto slot = out.per_biomarker.find(name);
      if (it == preds[i].values.end() || slot == out.per_biomarker.end()) {
        throw Error(Errc::PanelMismatch, "biomarker_accuracy: missing " + name);
      }
      const double err = std::abs(it->second - t);
      const bool ok = t != 0.0 ? err <= rel_tol * std::abs(t) : err <= abs_tol;
      slot->second += ok ? 1.0 : 0.0;
    }
  }
  std::vector<double> acc;
  for (auto& [_, v] : out.per_biomarker) {
    v /= static_cast<double>(preds.size());
    acc.push_back(v);
  }
  out.mean = mean_of(acc);
  out.stddev = population_std(acc);
  return out;
}

BiomarkerAccuracy biomarker_accuracy(const BiomarkerPanel& pred, const BiomarkerPanel& truth,
                                     double rel_tol, double abs_tol) {
  return biomarker_accuracy(std::span(&pred, 1), std::span(&truth, 1), rel_tol, abs_tol);
}

double r_squared(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size() || truth.size() < 2) {
    throw Error(Errc::ShapeMismatch, "r_squared: need matching lengths >= 2");
  }
  const double m = mean_of(truth);
  double res = 0.0, tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    res += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    tot += (truth[i] - m) * (truth[i] - m);
  }
  return tot > 0.0 ? 1.0 - res / tot : (res == 0.0 ? 1.0 : 0.0);
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_std(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

}  // namespace

ConfidenceInterval bootstrap_ci(const IndexMetric& metric, std::size_t n, int n_boot, double level,
                                std::uint64_t seed) {
  if (n < 2) throw Error(Errc::TooFewSamples, "bootstrap needs n >= 2, got " + std::to_string(n));
  if (n_boot < 1 || !(level > 0.0 && level < 1.0)) {
    throw Error(Errc::ConfigError, "bootstrap: n_boot >= 1 and level in (0, 1) required");
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  ConfidenceInterval ci;
  ci.level = level;
  ci.point = metric(all);

  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(n_boot));
  std::vector<std::size_t> draw(n);
  for (int b = 0; b < n_boot; ++b) {
    Rng rng = Rng::keyed(seed, static_cast<std::uint64_t>(b));
    for (auto& d : draw) d = rng.below(n);
    try {
      stats.push_back(metric(draw));
    } catch (const Error& e) {
      if (e.code() != Errc::SingleClass && e.code() != Errc::NoPositives) throw;
    }
  }
  if (stats.empty()) throw Error(Errc::TooFewSamples, "bootstrap: metric undefined on every resample");
  std::sort(stats.begin(), stats.end());
  const double alpha = (1.0 - level) / 2.0;
  ci.lo = quantile_sorted(stats, alpha);
  ci.hi = quantile_sorted(stats, 1.0 - alpha);
  ci.inverted = ci.point < ci.lo || ci.point > ci.hi;
  ci.valid_resamples = static_cast<int>(stats.size());
  return ci;
}

TuringScore turing_score(std::span<const TuringResponse> responses) {
  if (responses.empty()) throw Error(Errc::EmptyResponses, "turing_score: no responses");
  std::map<std::string, std::pair<long long, long long>> tally;  // correct, total
  for (const auto& r : responses) {
    auto& t = tally[r.rater_id];
    t.first += r.is_synthetic == r.judged_synthetic;
    t.second += 1;
  }
  TuringScore s;
  std::vector<double> acc;
  for (const auto& [rater, t] : tally) {
    const double a = static_cast<double>(t.first) / static_cast<double>(t.second);
    s.per_rater[rater] = a;
    acc.push_back(a);
  }
  s.mean = mean_of(acc);
  s.stddev = population_std(acc);
  return s;
}

json MetricReport::to_json() const {
  json j;
  j["task"] = task;
  j["metrics"] = json::object();
  for (const auto& [k, v] : metrics) j["metrics"][k] = v;
  j["curves"] = json::object();
  for (const auto& [k, pts] : curves) {
    json arr = json::array();
    for (const auto& p : pts) arr.push_back({p.x, p.y});
    j["curves"][k] = arr;
  }
  j["ci"] = json::object();
  for (const auto& [k, c] : ci) j["ci"][k] = {c.lo, c.point, c.hi};
  if (!confusion.empty()) j["confusion"] = confusion;
  j["n"] = n;
  j["seed"] = seed;
  j["config_digest"] = config_digest;
  if (!mode.empty()) j["mode"] = mode;
  return j;
}

void validate_report_json(const json& j) {
  auto fail = [](const std::string& field) {
    throw Error(Errc::SchemaViolation, "report field '" + field + "'");
  };
  if (!j.is_object()) fail("<root>");
  if (!j.contains("task") || !j["task"].is_string()) fail("task");
  if (!j.contains("metrics") || !j["metrics"].is_object()) fail("metrics");
  for (const auto& [k, v] : j["metrics"].items()) {
    if (!v.is_number()) fail("metrics." + k);
  }
  if (!j.contains("curves") || !j["curves"].is_object()) fail("curves");
  for (const auto& [k, v] : j["curves"].items()) {
    if (!v.is_array()) fail("curves." + k);
    for (const auto& p : v) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
        fail("curves." + k);
      }
    }
  }
  if (!j.contains("ci") || !j["ci"].is_object()) fail("ci");
  for (const auto& [k, v] : j["ci"].items()) {
    if (!v.is_array() || v.size() != 3) fail("ci." + k);
    for (const auto& x : v) {
      if (!x.is_number()) fail("ci." + k);
    }
  }
  if (j.contains("confusion")) {
    if (!j["confusion"].is_object()) fail("confusion");
    for (const auto& [k, m] : j["confusion"].items()) {
      if (!m.is_array()) fail("confusion." + k);
      for (const auto& row : m) {
        if (!row.is_array() || row.size() != m.size()) fail("confusion." + k);
        for (const auto& x : row) {
          if (!x.is_number_integer()) fail("confusion." + k);
        }
      }
    }
  }
  if (!j.contains("n") || !j["n"].is_number_unsigned()) fail("n");
  if (!j.contains("seed") || !j["seed"].is_number_unsigned()) fail("seed");
  if (!j.contains("config_digest") || !j["config_digest"].is_string()) fail("config_digest");
  if (j.contains("mode") && j["mode"] != "ovr" && j["mode"] != "binary") fail("mode");
}

MetricReport MetricReport::from_json(const json& j) {
  validate_report_json(j);
  MetricReport r;
  r.task = j["task"].get<std::string>();
  for (const auto& [k, v] : j["metrics"].items()) r.metrics[k] = v.get<double>();
  for (const auto& [k, v] : j["curves"].items()) {
    auto& pts = r.curves[k];
    for (const auto& p : v) pts.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  for (const auto& [k, v] : j["ci"].items()) {
    ConfidenceInterval c;
    c.lo = v[0].get<double>();
    c.point = v[1].get<double>();
    c.hi = v[2].get<double>();
    c.inverted = c.point < c.lo || c.point > c.hi;
    r.ci[k] = c;
  }
  if (j.contains("confusion")) {
    r.confusion = j["confusion"].get<std::map<std::string, std::vector<std::vector<long long>>>>();
  }
  r.n = j["n"].get<std::size_t>();
  r.seed = j["seed"].get<std::uint64_t>();
  r.config_digest = j["config_digest"].get<std::string>();
  r.mode = j.value("mode", "");
  return r;
}

}  // namespace vfm
