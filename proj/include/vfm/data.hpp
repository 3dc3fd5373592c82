#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "vfm/image.hpp"

namespace vfm {

enum class Modality { FUNDUS, OCT, UBM, SLIT_LAMP, FFA, MRI, B_ULTRASOUND, EXTERNAL_EYE };

inline constexpr std::array<Modality, 8> kAllModalities = {
    Modality::FUNDUS, Modality::OCT, Modality::UBM, Modality::SLIT_LAMP,
    Modality::FFA,    Modality::MRI, Modality::B_ULTRASOUND, Modality::EXTERNAL_EYE};

std::string_view modality_name(Modality m);
std::optional<Modality> parse_modality(std::string_view name);

struct DiseaseLabel {
  int class_index = 0;
  std::string class_name;
  std::optional<int> grade;

  friend bool operator==(const DiseaseLabel&, const DiseaseLabel&) = default;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

// Ordered [sclera_spur, angle_recess, auxiliary].
struct LandmarkSet {
  std::array<Point2, 3> points{};

  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;
};

struct BiomarkerPanel {
  std::map<std::string, double> values;
  std::string panel_spec_id;

  friend bool operator==(const BiomarkerPanel&, const BiomarkerPanel&) = default;
};

struct BiomarkerSpec {
  std::string name;
  std::string unit;
  double mean = 0.0;
  double stddev = 1.0;
};

struct PanelSpec {
  std::string id;
  std::vector<BiomarkerSpec> entries;
  std::vector<std::string> names() const;
};

// 38-entry default panel: HGB, RBC, UA, MCHC, TC followed by placeholders.
const PanelSpec& default_panel_spec();
const PanelSpec& panel_spec(std::string_view id);
inline constexpr const char* kNamedBiomarkers[] = {"HGB", "RBC", "UA", "MCHC", "TC"};

struct ImageRecord {
  std::string id;
  std::string subject_id;
  Modality modality = Modality::FUNDUS;
  std::string image_path;  // relative to the manifest root
  int height = 0;
  int width = 0;
  std::optional<DiseaseLabel> labels;
  std::optional<std::string> mask_path;
  std::optional<LandmarkSet> landmarks;
  std::optional<BiomarkerPanel> biomarkers;
  std::optional<std::string> visit_date;
  bool synthetic = false;
  // Generator parameters for toy records (null otherwise).
  nlohmann::json toy_params;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct LongitudinalPair {
  std::string subject_id;
  std::string image_t0;  // record id
  double delta_days = 0.0;
  int outcome = 0;

  friend bool operator==(const LongitudinalPair&, const LongitudinalPair&) = default;
};

inline constexpr const char* kManifestVersion = "1";

struct Manifest {
  std::vector<ImageRecord> records;
  std::vector<LongitudinalPair> pairs;
  std::string version = kManifestVersion;
  std::filesystem::path root_dir;

  const ImageRecord& find(const std::string& id) const;
  std::filesystem::path resolve(const std::string& relative) const { return root_dir / relative; }
  Image load_image(const ImageRecord& rec) const;
  Mask load_mask(const ImageRecord& rec) const;
  // SHA-256 of the canonical serialisation (root_dir excluded).
  std::string digest() const;
};

nlohmann::json record_to_json(const ImageRecord& rec);
nlohmann::json pair_to_json(const LongitudinalPair& pair);

// Line-delimited JSON: an optional {"version": ...} header line, then one
// object per line. Record lines carry the ImageRecord fields; lines of the
// form {"pair": {...}} carry LongitudinalPair entries.
Manifest load_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& m, const std::filesystem::path& path);

enum class ToyTask { CLASSIFY, SEGMENT_VESSEL, SEGMENT_LAYER, LANDMARK, BIOMARKER, FORECAST };

std::string_view toy_task_name(ToyTask t);
std::optional<ToyTask> parse_toy_task(std::string_view name);

struct ToyDataSpec {
  Modality modality = Modality::FUNDUS;
  int n_images = 10;
  int image_size = 128;
  ToyTask task = ToyTask::CLASSIFY;
  int class_count = 3;
  double noise_level = 0.1;
  std::uint64_t seed = 0;
  int patch_size = 16;
  int channels = 1;
  int images_per_subject = 1;
  // Optional class names; defaults to NORMAL followed by common disease names.
  std::vector<std::string> class_names;

  void validate() const;
};

ToyDataSpec toy_spec_from_json(const nlohmann::json& j);
nlohmann::json toy_spec_to_json(const ToyDataSpec& spec);

std::vector<std::string> default_class_names(int k);

// Writes images (and masks) under out_dir and returns the manifest, which is
// also written to out_dir/manifest.jsonl.
Manifest generate_toy_dataset(const ToyDataSpec& spec, const std::filesystem::path& out_dir);

// Wedge geometry recorded for LANDMARK records; landmarks are a pure function of it.
struct WedgeParams {
  double apex_x = 0.0;
  double apex_y = 0.0;
  double theta_upper = 0.0;  // direction of the corneoscleral arm (radians)
  double theta_lower = 0.0;  // direction of the iris arm
  double spur_distance = 0.0;
};
LandmarkSet wedge_landmarks(const WedgeParams& w);
WedgeParams wedge_from_json(const nlohmann::json& j);

// Deterministic forecasting rule used to label FORECAST pairs.
inline constexpr double kForecastIntervalWeight = 0.3;
inline constexpr double kForecastThreshold = 0.9;
int forecast_rule(double cue, double delta_days);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Subject-level split; every record of a subject lands in the same part.
std::tuple<Manifest, Manifest, Manifest> split_dataset(const Manifest& m, SplitFractions f,
                                                       std::uint64_t seed);

// Subset of records by predicate-selected ids (pairs follow their image).
Manifest subset(const Manifest& m, const std::vector<std::size_t>& record_indices);

}  // namespace vfm
