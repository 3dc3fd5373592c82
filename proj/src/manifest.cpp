#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "vfm/data.hpp"
#include "vfm/digest.hpp"
#include "vfm/error.hpp"
#include "vfm/rng.hpp"

namespace vfm {

using nlohmann::json;

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::FUNDUS: return "FUNDUS";
    case Modality::OCT: return "OCT";
    case Modality::UBM: return "UBM";
    case Modality::SLIT_LAMP: return "SLIT_LAMP";
    case Modality::FFA: return "FFA";
    case Modality::MRI: return "MRI";
    case Modality::B_ULTRASOUND: return "B_ULTRASOUND";
    case Modality::EXTERNAL_EYE: return "EXTERNAL_EYE";
  }
  return "FUNDUS";
}

std::optional<Modality> parse_modality(std::string_view name) {
  for (Modality m : kAllModalities) {
    if (modality_name(m) == name) return m;
  }
  return std::nullopt;
}

std::vector<std::string> PanelSpec::names() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.name);
  return out;
}

const PanelSpec& default_panel_spec() {
  static const PanelSpec spec = [] {
    PanelSpec p;
    p.id = "toy38";
    p.entries = {{"HGB", "g/L", 140.0, 15.0},
                 {"RBC", "10^12/L", 4.7, 0.5},
                 {"UA", "umol/L", 330.0, 80.0},
                 {"MCHC", "g/L", 330.0, 12.0},
                 {"TC", "mmol/L", 4.8, 0.9}};
    for (int i = 6; i <= 38; ++i) {
      char name[16];
      std::snprintf(name, sizeof(name), "BM%02d", i);
      p.entries.push_back({name, "a.u.", 10.0 + 0.5 * (i % 7), 1.0 + 0.25 * (i % 5)});
    }
    return p;
  }();
  return spec;
}

const PanelSpec& panel_spec(std::string_view id) {
  if (id == default_panel_spec().id) return default_panel_spec();
  throw Error(Errc::SchemaViolation, "unknown panel_spec_id '" + std::string(id) + "'");
}

const ImageRecord& Manifest::find(const std::string& id) const {
  for (const auto& r : records) {
    if (r.id == id) return r;
  }
  throw Error(Errc::DanglingPath, "no record with id '" + id + "'");
}

Image Manifest::load_image(const ImageRecord& rec) const {
  const auto path = resolve(rec.image_path);
  if (!std::filesystem::exists(path)) {
    throw Error(Errc::DanglingPath, "record " + rec.id + ": missing image " + path.string());
  }
  return read_png(path);
}

Mask Manifest::load_mask(const ImageRecord& rec) const {
  if (!rec.mask_path) throw Error(Errc::SchemaViolation, "record " + rec.id + " has no mask_path");
  const auto path = resolve(*rec.mask_path);
  if (!std::filesystem::exists(path)) {
    throw Error(Errc::DanglingPath, "record " + rec.id + ": missing mask " + path.string());
  }
  return read_mask_png(path);
}

json record_to_json(const ImageRecord& rec) {
  json j;
  j["id"] = rec.id;
  j["subject_id"] = rec.subject_id;
  j["modality"] = modality_name(rec.modality);
  j["image_path"] = rec.image_path;
  j["height"] = rec.height;
  j["width"] = rec.width;
  if (rec.labels) {
    json l = {{"class_index", rec.labels->class_index}, {"class_name", rec.labels->class_name}};
    if (rec.labels->grade) l["grade"] = *rec.labels->grade;
    j["labels"] = l;
  }
  if (rec.mask_path) j["mask_path"] = *rec.mask_path;
  if (rec.landmarks) {
    json pts = json::array();
    for (const auto& p : rec.landmarks->points) pts.push_back({p.x, p.y});
    j["landmarks"] = {{"points", pts}};
  }
  if (rec.biomarkers) {
    j["biomarkers"] = {{"values", rec.biomarkers->values},
                       {"panel_spec_id", rec.biomarkers->panel_spec_id}};
  }
  if (rec.visit_date) j["visit_date"] = *rec.visit_date;
  if (rec.synthetic) j["synthetic"] = true;
  if (!rec.toy_params.is_null()) j["toy_params"] = rec.toy_params;
  return j;
}

json pair_to_json(const LongitudinalPair& pair) {
  return {{"pair",
           {{"subject_id", pair.subject_id},
            {"image_t0", pair.image_t0},
            {"delta_days", pair.delta_days},
            {"outcome", pair.outcome}}}};
}

namespace {

[[noreturn]] void schema_error(std::size_t line, const std::string& field, const std::string& why) {
  throw Error(Errc::SchemaViolation,
              "line " + std::to_string(line) + ", field '" + field + "': " + why);
}

template <typename T>
T field(const json& j, const char* name, std::size_t line) {
  if (!j.contains(name)) schema_error(line, name, "missing");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    schema_error(line, name, "wrong type");
  }
}

bool valid_iso_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9}) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  const int month = std::stoi(s.substr(5, 2));
  const int day = std::stoi(s.substr(8, 2));
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

ImageRecord parse_record(const json& j, std::size_t line) {
  static const std::set<std::string> kKnown = {
      "id",         "subject_id", "modality",   "image_path", "height",     "width",    "labels",
      "mask_path",  "landmarks",  "biomarkers", "visit_date", "synthetic",  "toy_params"};
  for (const auto& item : j.items()) {
    if (!kKnown.count(item.key())) schema_error(line, item.key(), "unknown field");
  }
  ImageRecord r;
  r.id = field<std::string>(j, "id", line);
  if (r.id.empty()) schema_error(line, "id", "empty");
  r.subject_id = field<std::string>(j, "subject_id", line);
  const auto mod = field<std::string>(j, "modality", line);
  const auto parsed = parse_modality(mod);
  if (!parsed) {
    throw Error(Errc::UnknownModality, "line " + std::to_string(line) + ": '" + mod + "'");
  }
  r.modality = *parsed;
  r.image_path = field<std::string>(j, "image_path", line);
  r.height = field<int>(j, "height", line);
  r.width = field<int>(j, "width", line);
  if (r.height <= 0) schema_error(line, "height", "must be positive");
  if (r.width <= 0) schema_error(line, "width", "must be positive");
  if (j.contains("labels")) {
    const json& l = j["labels"];
    DiseaseLabel label;
    label.class_index = field<int>(l, "class_index", line);
    label.class_name = field<std::string>(l, "class_name", line);
    if (l.contains("grade")) label.grade = field<int>(l, "grade", line);
    if (label.class_index < 0) schema_error(line, "labels.class_index", "negative");
    r.labels = label;
  }
  if (j.contains("mask_path")) r.mask_path = field<std::string>(j, "mask_path", line);
  if (j.contains("landmarks")) {
    const auto pts = field<std::vector<std::vector<double>>>(j["landmarks"], "points", line);
    if (pts.size() != 3) schema_error(line, "landmarks.points", "expected exactly 3 points");
    LandmarkSet ls;
    for (std::size_t i = 0; i < 3; ++i) {
      if (pts[i].size() != 2) schema_error(line, "landmarks.points", "expected [x, y]");
      ls.points[i] = {pts[i][0], pts[i][1]};
      if (!(ls.points[i].x >= 0 && ls.points[i].x <= r.width - 1 && ls.points[i].y >= 0 &&
            ls.points[i].y <= r.height - 1)) {
        schema_error(line, "landmarks.points", "coordinate outside image bounds");
      }
    }
    r.landmarks = ls;
  }
  if (j.contains("biomarkers")) {
    BiomarkerPanel panel;
    panel.values = field<std::map<std::string, double>>(j["biomarkers"], "values", line);
    panel.panel_spec_id = field<std::string>(j["biomarkers"], "panel_spec_id", line);
    const auto names = panel_spec(panel.panel_spec_id).names();
    std::set<std::string> expected(names.begin(), names.end());
    std::set<std::string> got;
    for (const auto& [k, v] : panel.values) {
      got.insert(k);
      if (!std::isfinite(v)) schema_error(line, "biomarkers.values." + k, "non-finite");
    }
    if (got != expected) schema_error(line, "biomarkers.values", "key set differs from panel spec");
    r.biomarkers = std::move(panel);
  }
  if (j.contains("visit_date")) {
    r.visit_date = field<std::string>(j, "visit_date", line);
    if (!valid_iso_date(*r.visit_date)) schema_error(line, "visit_date", "not an ISO-8601 date");
  }
  if (j.contains("synthetic")) r.synthetic = field<bool>(j, "synthetic", line);
  if (j.contains("toy_params")) r.toy_params = j["toy_params"];
  return r;
}

LongitudinalPair parse_pair(const json& j, std::size_t line) {
  LongitudinalPair p;
  p.subject_id = field<std::string>(j, "subject_id", line);
  p.image_t0 = field<std::string>(j, "image_t0", line);
  p.delta_days = field<double>(j, "delta_days", line);
  p.outcome = field<int>(j, "outcome", line);
  if (!(p.delta_days > 0.0) || !std::isfinite(p.delta_days)) {
    schema_error(line, "pair.delta_days", "must be > 0");
  }
  if (p.outcome != 0 && p.outcome != 1) schema_error(line, "pair.outcome", "must be 0 or 1");
  return p;
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::MissingFile, path.string());
  Manifest m;
  m.root_dir = path.parent_path();
  std::vector<std::size_t> pair_lines;
  std::unordered_set<std::string> ids;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      schema_error(line, "<line>", std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) schema_error(line, "<line>", "expected an object");
    if (j.contains("version") && j.size() == 1) {
      m.version = field<std::string>(j, "version", line);
    } else if (j.contains("pair")) {
      m.pairs.push_back(parse_pair(j["pair"], line));
      pair_lines.push_back(line);
    } else {
      auto rec = parse_record(j, line);
      if (!ids.insert(rec.id).second) schema_error(line, "id", "duplicate id '" + rec.id + "'");
      m.records.push_back(std::move(rec));
    }
  }

  for (const auto& rec : m.records) {
    const auto img = m.resolve(rec.image_path);
    if (!std::filesystem::exists(img)) {
      throw Error(Errc::DanglingPath, "record " + rec.id + ": " + img.string());
    }
    int h = 0, w = 0;
    png_dimensions(img, h, w);
    if (h != rec.height || w != rec.width) {
      throw Error(Errc::SchemaViolation, "record " + rec.id + ": image decodes to " +
                                             std::to_string(h) + "x" + std::to_string(w) +
                                             ", declared " + std::to_string(rec.height) + "x" +
                                             std::to_string(rec.width));
    }
    if (rec.mask_path && !std::filesystem::exists(m.resolve(*rec.mask_path))) {
      throw Error(Errc::DanglingPath, "record " + rec.id + ": mask " + *rec.mask_path);
    }
  }
  for (std::size_t i = 0; i < m.pairs.size(); ++i) {
    const auto& p = m.pairs[i];
    auto it = std::find_if(m.records.begin(), m.records.end(),
                           [&](const ImageRecord& r) { return r.id == p.image_t0; });
    if (it == m.records.end()) schema_error(pair_lines[i], "pair.image_t0", "unknown record id");
    if (it->modality != Modality::FUNDUS) {
      schema_error(pair_lines[i], "pair.image_t0", "longitudinal image must be FUNDUS");
    }
  }
  return m;
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::UnwritablePath, path.string());
  out << json{{"version", m.version}}.dump() << '\n';
  for (const auto& r : m.records) out << record_to_json(r).dump() << '\n';
  for (const auto& p : m.pairs) out << pair_to_json(p).dump() << '\n';
  if (!out) throw Error(Errc::UnwritablePath, path.string());
}

std::string Manifest::digest() const {
  Sha256 h;
  h.update(version).update("\n");
  for (const auto& r : records) h.update(record_to_json(r).dump()).update("\n");
  for (const auto& p : pairs) h.update(pair_to_json(p).dump()).update("\n");
  return h.hex();
}

Manifest subset(const Manifest& m, const std::vector<std::size_t>& record_indices) {
  Manifest out;
  out.version = m.version;
  out.root_dir = m.root_dir;
  std::unordered_set<std::string> kept;
  for (std::size_t i : record_indices) {
    out.records.push_back(m.records.at(i));
    kept.insert(m.records[i].id);
  }
  for (const auto& p : m.pairs) {
    if (kept.count(p.image_t0)) out.pairs.push_back(p);
  }
  return out;
}

std::tuple<Manifest, Manifest, Manifest> split_dataset(const Manifest& m, SplitFractions f,
                                                       std::uint64_t seed) {
  const std::array<double, 3> fr = {f.train, f.val, f.test};
  for (double v : fr) {
    if (!(v > 0.0)) throw Error(Errc::InvalidSpec, "split fractions must be positive");
  }
  if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-9) {
    throw Error(Errc::InvalidSpec, "split fractions must sum to 1");
  }

  std::vector<std::string> subjects;
  std::unordered_map<std::string, std::size_t> subject_index;
  for (const auto& r : m.records) {
    if (subject_index.emplace(r.subject_id, subjects.size()).second) subjects.push_back(r.subject_id);
  }
  const std::size_t n = subjects.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  // Largest-remainder apportionment of subjects to the three parts.
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = fr[k] * static_cast<double>(n);
    counts[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[k] = exact - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  while (assigned < n) {
    int best = 0;
    for (int k = 1; k < 3; ++k) {
      if (rem[k] > rem[best] + 1e-12) best = k;
    }
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  if (n >= 3) {
    for (int k = 0; k < 3; ++k) {
      if (counts[k] == 0) {
        throw Error(Errc::DegenerateSplit, "split " + std::to_string(k) + " would be empty (" +
                                               std::to_string(n) + " subjects)");
      }
    }
  }

  std::vector<int> part_of(n);
  std::size_t pos = 0;
  for (int k = 0; k < 3; ++k) {
    for (std::size_t c = 0; c < counts[k]; ++c) part_of[order[pos++]] = k;
  }
  std::array<std::vector<std::size_t>, 3> idx;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    idx[part_of[subject_index.at(m.records[i].subject_id)]].push_back(i);
  }
  return {subset(m, idx[0]), subset(m, idx[1]), subset(m, idx[2])};
}

}  // namespace vfm
