#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vfm/data.hpp"
#include "vfm/image.hpp"

namespace vfm {

// Mann-Whitney AUC: P(s+ > s-) + 0.5 P(tie). Labels are 0/1.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
};

// (fpr, tpr) points over descending unique thresholds, starting at (0, 0).
std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

struct PrResult {
  std::vector<CurvePoint> curve;  // (recall, precision) per descending unique threshold
  double ap = 0.0;
};

// Step-wise AP = sum (R_i - R_{i-1}) P_i over descending unique thresholds.
PrResult pr_curve_and_ap(std::span<const double> scores, std::span<const int> labels);

struct F1Stats {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Binary stats with class 1 as positive; F1 is 0 when P + R = 0.
F1Stats f1_stats(std::span<const int> preds, std::span<const int> labels);
double f1(std::span<const int> preds, std::span<const int> labels);
double macro_f1(std::span<const int> preds, std::span<const int> labels, int num_classes);
double accuracy(std::span<const int> preds, std::span<const int> labels);

// Counts indexed [label][pred].
std::vector<std::vector<long long>> confusion_matrix(std::span<const int> preds,
                                                     std::span<const int> labels, int num_classes);

// 2|A n B| / (|A| + |B|) for class c; 1 when both are empty.
double dice(const Mask& a, const Mask& b, int c);

struct LandmarkError {
  std::array<double, 3> per_point{};
  double mean = 0.0;
};

LandmarkError landmark_error(const LandmarkSet& pred, const LandmarkSet& truth);
LandmarkError landmark_error(std::span<const LandmarkSet> preds, std::span<const LandmarkSet> truths);

struct BiomarkerAccuracy {
  std::map<std::string, double> per_biomarker;
  double mean = 0.0;
  double stddev = 0.0;  // population std across biomarkers
};

// Fraction of samples with |pred - truth| <= rel_tol * |truth|. Entries with
// zero truth use |pred| <= abs_tol instead.
BiomarkerAccuracy biomarker_accuracy(std::span<const BiomarkerPanel> preds,
                                     std::span<const BiomarkerPanel> truths, double rel_tol = 0.2,
                                     double abs_tol = 0.2);
BiomarkerAccuracy biomarker_accuracy(const BiomarkerPanel& pred, const BiomarkerPanel& truth,
                                     double rel_tol = 0.2, double abs_tol = 0.2);

// Coefficient of determination 1 - SS_res / SS_tot.
double r_squared(std::span<const double> pred, std::span<const double> truth);

struct ConfidenceInterval {
  double lo = 0.0;
  double point = 0.0;
  double hi = 0.0;
  double level = 0.95;
  bool inverted = false;  // point fell outside [lo, hi]
  int valid_resamples = 0;
};

// Metric evaluated on a multiset of sample indices.
using IndexMetric = std::function<double(std::span<const std::size_t> indices)>;

// Percentile bootstrap. Resample b draws from Rng::keyed(seed, b). Resamples
// on which the metric is undefined (SingleClass / NoPositives) are skipped.
ConfidenceInterval bootstrap_ci(const IndexMetric& metric, std::size_t n, int n_boot = 1000,
                                double level = 0.95, std::uint64_t seed = 0);

struct TuringResponse {
  std::string rater_id;
  bool is_synthetic = false;
  bool judged_synthetic = false;
  std::string image_id;
};

struct TuringScore {
  std::map<std::string, double> per_rater;
  double mean = 0.0;
  double stddev = 0.0;  // population std across raters
};

TuringScore turing_score(std::span<const TuringResponse> responses);

double mean_of(std::span<const double> v);
double population_std(std::span<const double> v);

struct MetricReport {
  std::string task;
  std::map<std::string, double> metrics;
  std::map<std::string, std::vector<CurvePoint>> curves;
  std::map<std::string, ConfidenceInterval> ci;
  std::map<std::string, std::vector<std::vector<long long>>> confusion;  // [label][pred]
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::string mode;  // "ovr" or "binary" for AUC-bearing reports

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

// Throws SchemaViolation naming the first offending field.
void validate_report_json(const nlohmann::json& j);

}  // namespace vfm
