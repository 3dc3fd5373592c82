#include <algorithm>
#include <cctype>
#include <chrono>
#include <set>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "vfm/data.hpp"
#include "vfm/error.hpp"
#include "vfm/rng.hpp"

namespace vfm {

using nlohmann::json;

std::string_view toy_task_name(ToyTask t) {
  switch (t) {
    case ToyTask::CLASSIFY: return "CLASSIFY";
    case ToyTask::SEGMENT_VESSEL: return "SEGMENT_VESSEL";
    case ToyTask::SEGMENT_LAYER: return "SEGMENT_LAYER";
    case ToyTask::LANDMARK: return "LANDMARK";
    case ToyTask::BIOMARKER: return "BIOMARKER";
    case ToyTask::FORECAST: return "FORECAST";
  }
  return "CLASSIFY";
}

std::optional<ToyTask> parse_toy_task(std::string_view name) {
  for (ToyTask t : {ToyTask::CLASSIFY, ToyTask::SEGMENT_VESSEL, ToyTask::SEGMENT_LAYER,
                    ToyTask::LANDMARK, ToyTask::BIOMARKER, ToyTask::FORECAST}) {
    if (toy_task_name(t) == name) return t;
  }
  return std::nullopt;
}

std::vector<std::string> default_class_names(int k) {
  static const char* kNames[] = {"NORMAL", "DR",  "AMD", "GLAUCOMA", "CATARACT",
                                 "HR",     "RVO", "RD"};
  std::vector<std::string> out;
  for (int i = 0; i < k; ++i) {
    out.push_back(i < 8 ? kNames[i] : "CLASS_" + std::to_string(i));
  }
  return out;
}

void ToyDataSpec::validate() const {
  auto bad = [](const std::string& why) { throw Error(Errc::InvalidSpec, why); };
  if (n_images < 1) bad("n_images must be >= 1");
  if (patch_size < 1) bad("patch_size must be >= 1");
  if (image_size < 8) bad("image_size must be >= 8");
  if (image_size % patch_size != 0) bad("image_size must be divisible by patch_size");
  if (!(noise_level >= 0.0 && noise_level <= 1.0)) bad("noise_level must lie in [0, 1]");
  if (channels != 1 && channels != 3) bad("channels must be 1 or 3");
  if (images_per_subject < 1) bad("images_per_subject must be >= 1");
  if ((task == ToyTask::CLASSIFY || task == ToyTask::SEGMENT_LAYER) && class_count < 2) {
    bad("class_count must be >= 2");
  }
  if (task == ToyTask::FORECAST && modality != Modality::FUNDUS) bad("FORECAST requires FUNDUS");
  if (task == ToyTask::SEGMENT_LAYER && class_count > 8) bad("SEGMENT_LAYER supports <= 8 bands");
  if (!class_names.empty() && static_cast<int>(class_names.size()) != class_count) {
    bad("class_names must have class_count entries");
  }
}

ToyDataSpec toy_spec_from_json(const json& j) {
  static const std::set<std::string> kKnown = {
      "modality",   "n_images", "image_size", "task",          "class_count",       "noise_level",
      "seed",       "patch_size", "channels", "images_per_subject", "class_names"};
  for (const auto& item : j.items()) {
    if (!kKnown.count(item.key())) {
      throw Error(Errc::ConfigError, "unknown key '" + item.key() + "'");
    }
  }
  ToyDataSpec s;
  try {
    if (j.contains("modality")) {
      const auto name = j["modality"].get<std::string>();
      auto m = parse_modality(name);
      if (!m) throw Error(Errc::ConfigError, "modality: unknown value '" + name + "'");
      s.modality = *m;
    }
    if (j.contains("task")) {
      const auto name = j["task"].get<std::string>();
      auto t = parse_toy_task(name);
      if (!t) throw Error(Errc::ConfigError, "task: unknown value '" + name + "'");
      s.task = *t;
    }
    s.n_images = j.value("n_images", s.n_images);
    s.image_size = j.value("image_size", s.image_size);
    s.class_count = j.value("class_count", s.class_count);
    s.noise_level = j.value("noise_level", s.noise_level);
    s.seed = j.value("seed", s.seed);
    s.patch_size = j.value("patch_size", s.patch_size);
    s.channels = j.value("channels", s.channels);
    s.images_per_subject = j.value("images_per_subject", s.images_per_subject);
    s.class_names = j.value("class_names", s.class_names);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("toy spec: ") + e.what());
  }
  s.validate();
  return s;
}

json toy_spec_to_json(const ToyDataSpec& s) {
  json j = {{"modality", modality_name(s.modality)},
            {"n_images", s.n_images},
            {"image_size", s.image_size},
            {"task", toy_task_name(s.task)},
            {"class_count", s.class_count},
            {"noise_level", s.noise_level},
            {"seed", s.seed},
            {"patch_size", s.patch_size},
            {"channels", s.channels},
            {"images_per_subject", s.images_per_subject}};
  if (!s.class_names.empty()) j["class_names"] = s.class_names;
  return j;
}

LandmarkSet wedge_landmarks(const WedgeParams& w) {
  const double ux = std::cos(w.theta_upper), uy = std::sin(w.theta_upper);
  const double lx = std::cos(w.theta_lower), ly = std::sin(w.theta_lower);
  const Point2 spur{w.apex_x + w.spur_distance * ux, w.apex_y + w.spur_distance * uy};
  // Foot of the perpendicular from the spur onto the iris arm.
  const double proj = (spur.x - w.apex_x) * lx + (spur.y - w.apex_y) * ly;
  const Point2 aux{w.apex_x + proj * lx, w.apex_y + proj * ly};
  return LandmarkSet{{spur, Point2{w.apex_x, w.apex_y}, aux}};
}

WedgeParams wedge_from_json(const json& j) {
  WedgeParams w;
  w.apex_x = j.at("apex_x").get<double>();
  w.apex_y = j.at("apex_y").get<double>();
  w.theta_upper = j.at("theta_upper").get<double>();
  w.theta_lower = j.at("theta_lower").get<double>();
  w.spur_distance = j.at("spur_distance").get<double>();
  return w;
}

int forecast_rule(double cue, double delta_days) {
  return cue + kForecastIntervalWeight * (delta_days / 1000.0) > kForecastThreshold ? 1 : 0;
}

namespace {

constexpr double kPi = std::numbers::pi;

struct Canvas {
  int size;
  std::vector<double> v;
  explicit Canvas(int s, double fill = 0.0) : size(s), v(static_cast<std::size_t>(s) * s, fill) {}
  double& at(int y, int x) { return v[static_cast<std::size_t>(y) * size + x]; }
};

template <typename Fn>
void for_each_pixel(int size, Fn&& fn) {
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) fn(y, x);
  }
}

void stamp_disk(Canvas& c, Mask* mask, double cx, double cy, double r, double value,
                std::uint8_t label = 1) {
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
  const int y1 = std::min(c.size - 1, static_cast<int>(std::ceil(cy + r)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
  const int x1 = std::min(c.size - 1, static_cast<int>(std::ceil(cx + r)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) {
        c.at(y, x) = value;
        if (mask) mask->at(y, x) = label;
      }
    }
  }
}

Canvas background(Modality m, int s, Rng& rng) {
  Canvas c(s);
  const double S = s;
  switch (m) {
    case Modality::FUNDUS: {
      const double disc_x = S * rng.uniform(0.65, 0.75), disc_y = S * rng.uniform(0.45, 0.55);
      for_each_pixel(s, [&](int y, int x) {
        const double d = std::hypot(x - S / 2, y - S / 2) / (0.48 * S);
        c.at(y, x) = d < 1.0 ? 0.32 + 0.1 * (1.0 - d * d) : 0.03;
        if (std::hypot(x - disc_x, y - disc_y) < 0.06 * S) c.at(y, x) += 0.1;
      });
      break;
    }
    case Modality::OCT: {
      const double phase = rng.uniform(0, 2 * kPi);
      const double amp = 0.02 * S;
      const std::array<double, 4> cuts = {0.3, 0.45, 0.6, 0.75};
      const std::array<double, 5> level = {0.05, 0.38, 0.22, 0.45, 0.12};
      for_each_pixel(s, [&](int y, int x) {
        const double off = amp * std::sin(2 * kPi * x / S + phase);
        int band = 0;
        while (band < 4 && y > cuts[band] * S + off) ++band;
        c.at(y, x) = level[band];
      });
      break;
    }
    case Modality::UBM: {
      for_each_pixel(s, [&](int y, int x) { c.at(y, x) = 0.12 + 0.08 * rng.uniform(); });
      break;
    }
    case Modality::SLIT_LAMP: {
      const double beam = S * rng.uniform(0.35, 0.65);
      for_each_pixel(s, [&](int y, int x) {
        const double dx = (x - beam) / (0.04 * S);
        c.at(y, x) = 0.08 + 0.35 * std::exp(-dx * dx);
        if (std::abs(std::hypot(x - S / 2, y - S / 2) - 0.35 * S) < 0.03 * S) c.at(y, x) += 0.1;
      });
      break;
    }
    case Modality::FFA: {
      for_each_pixel(s, [&](int y, int x) {
        const double d = std::hypot(x - S / 2, y - S / 2) / (0.5 * S);
        c.at(y, x) = 0.05 + 0.2 * std::max(0.0, 1.0 - d);
      });
      break;
    }
    case Modality::MRI: {
      for_each_pixel(s, [&](int y, int x) {
        const double ex = (x - S / 2) / (0.42 * S), ey = (y - S / 2) / (0.46 * S);
        c.at(y, x) = ex * ex + ey * ey < 1.0 ? 0.3 : 0.0;
      });
      break;
    }
    case Modality::B_ULTRASOUND: {
      for_each_pixel(s, [&](int y, int x) {
        const double ang = std::atan2(x - S / 2, y + 0.1 * S);
        const bool in_fan = std::abs(ang) < 0.6;
        c.at(y, x) = in_fan ? 0.18 + 0.1 * rng.uniform() : 0.0;
      });
      break;
    }
    case Modality::EXTERNAL_EYE: {
      for_each_pixel(s, [&](int y, int x) {
        const double ex = (x - S / 2) / (0.45 * S), ey = (y - S / 2) / (0.25 * S);
        c.at(y, x) = ex * ex + ey * ey < 1.0 ? 0.45 : 0.3;
        if (std::hypot(x - S / 2, y - S / 2) < 0.12 * S) c.at(y, x) = 0.2;
      });
      break;
    }
  }
  return c;
}

void add_noise(Canvas& c, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  for (double& v : c.v) v += rng.normal(0.0, sigma);
}

Image to_image(const Canvas& c, int channels) {
  static constexpr double kTint[3] = {1.0, 0.8, 0.6};
  Image img(c.size, c.size, channels);
  for (int y = 0; y < c.size; ++y) {
    for (int x = 0; x < c.size; ++x) {
      const double v = std::clamp(c.v[static_cast<std::size_t>(y) * c.size + x], 0.0, 1.0);
      for (int ch = 0; ch < channels; ++ch) img.at(y, x, ch) = channels == 1 ? v : v * kTint[ch];
    }
  }
  return img;
}

// Class-dependent object: shape indexed by class, brightness rising with class.
void draw_class_object(Canvas& c, Mask& mask, int k, int num_classes, Rng& rng, json& params) {
  const double S = c.size;
  const double cx = S * rng.uniform(0.3, 0.7), cy = S * rng.uniform(0.3, 0.7);
  const double r = S * rng.uniform(0.12, 0.18);
  const double level = 0.6 + 0.35 * k / std::max(1, num_classes - 1);
  const int shape = k % 6;
  for_each_pixel(c.size, [&](int y, int x) {
    const double dx = x - cx, dy = y - cy;
    const double d = std::hypot(dx, dy);
    bool inside = false;
    switch (shape) {
      case 0: inside = d <= r; break;
      case 1: inside = d <= r && d >= 0.55 * r; break;
      case 2: inside = std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r; break;
      case 3:
        inside = (std::abs(dx) <= 0.3 * r && std::abs(dy) <= r) ||
                 (std::abs(dy) <= 0.3 * r && std::abs(dx) <= r);
        break;
      case 4: inside = dy <= 0.7 * r && dy >= -r && std::abs(dx) <= (dy + r) * 0.6; break;
      default: inside = std::abs(dx) <= r && std::abs(dy) <= 0.35 * r; break;
    }
    if (inside) {
      c.at(y, x) = level;
      mask.at(y, x) = 1;
    }
  });
  params = {{"center_x", cx}, {"center_y", cy}, {"radius", r}, {"shape", shape}, {"level", level}};
}

void draw_vessel(Canvas& c, Mask& mask, double x, double y, double angle, double length,
                 double radius, int depth, Rng& rng) {
  const double value = 0.1;
  for (double t = 0; t < length; t += 0.5) {
    angle += rng.normal(0.0, 0.03);
    x += 0.5 * std::cos(angle);
    y += 0.5 * std::sin(angle);
    if (x < -radius || y < -radius || x > c.size + radius || y > c.size + radius) return;
    stamp_disk(c, &mask, x, y, radius, value);
  }
  if (depth <= 0) return;
  const double spread = rng.uniform(0.35, 0.7);
  draw_vessel(c, mask, x, y, angle + spread, length * 0.7, std::max(0.9, radius * 0.8), depth - 1,
              rng);
  draw_vessel(c, mask, x, y, angle - spread, length * 0.7, std::max(0.9, radius * 0.8), depth - 1,
              rng);
}

std::string iso_date(int day_offset) {
  using namespace std::chrono;
  const sys_days d = sys_days{year{2015} / January / 1} + days{day_offset};
  const year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

// Unit-variance loading of each panel entry onto the latent factors; fixed
// per panel so every dataset shares one generative map.
std::vector<std::array<double, 4>> panel_loadings(std::size_t n) {
  Rng rng(0x38b1u);
  std::vector<std::array<double, 4>> a(n);
  for (auto& row : a) {
    double norm = 0.0;
    for (double& v : row) {
      v = rng.normal();
      norm += v * v;
    }
    for (double& v : row) v /= std::sqrt(norm);
  }
  return a;
}

}  // namespace

Manifest generate_toy_dataset(const ToyDataSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (!ec) std::filesystem::create_directories(out_dir / "masks", ec);
  if (ec) throw Error(Errc::UnwritableOutputDir, out_dir.string() + ": " + ec.message());
  const auto names = spec.class_names.empty() ? default_class_names(spec.class_count)
                                              : spec.class_names;

  Manifest m;
  m.root_dir = out_dir;
  const int S = spec.image_size;
  std::string prefix(modality_name(spec.modality));
  std::transform(prefix.begin(), prefix.end(), prefix.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  const auto loadings = panel_loadings(default_panel_spec().entries.size());
  const double pixel_sigma = 0.2 * spec.noise_level;

  for (int i = 0; i < spec.n_images; ++i) {
    char idbuf[64], subjbuf[64];
    std::snprintf(idbuf, sizeof(idbuf), "%s_%05d", prefix.c_str(), i);
    std::snprintf(subjbuf, sizeof(subjbuf), "%s_subj_%05d", prefix.c_str(),
                  i / spec.images_per_subject);
    Rng rng = Rng::keyed(spec.seed, static_cast<std::uint64_t>(i));

    ImageRecord rec;
    rec.id = idbuf;
    rec.subject_id = subjbuf;
    rec.modality = spec.modality;
    rec.height = S;
    rec.width = S;
    rec.image_path = "images/" + rec.id + ".png";

    Canvas canvas = background(spec.modality, S, rng);
    Mask mask(S, S);
    bool has_mask = false;
    json params;

    switch (spec.task) {
      case ToyTask::CLASSIFY: {
        const int k = i % spec.class_count;
        draw_class_object(canvas, mask, k, spec.class_count, rng, params);
        rec.labels = DiseaseLabel{k, names[k], std::nullopt};
        has_mask = true;
        add_noise(canvas, pixel_sigma, rng);
        break;
      }
      case ToyTask::SEGMENT_VESSEL: {
        const double radius = std::max(1.0, S / 64.0);
        const double ox = S * rng.uniform(0.55, 0.75), oy = S * rng.uniform(0.4, 0.6);
        const int roots = 3;
        for (int r = 0; r < roots; ++r) {
          const double angle = 2 * kPi * (r + rng.uniform(0.0, 0.6)) / roots;
          draw_vessel(canvas, mask, ox, oy, angle, S * rng.uniform(0.25, 0.35), radius, 2, rng);
        }
        params = {{"origin_x", ox}, {"origin_y", oy}};
        has_mask = true;
        add_noise(canvas, pixel_sigma, rng);
        break;
      }
      case ToyTask::SEGMENT_LAYER: {
        const int bands = spec.class_count;
        std::vector<double> base(bands), phase(bands), amp(bands);
        for (int b = 1; b < bands; ++b) {
          base[b] = S * (b + rng.uniform(-0.2, 0.2)) / bands;
          phase[b] = rng.uniform(0, 2 * kPi);
          amp[b] = S * rng.uniform(0.01, 0.04);
        }
        for_each_pixel(S, [&](int y, int x) {
          int band = 0;
          for (int b = 1; b < bands; ++b) {
            if (y >= base[b] + amp[b] * std::sin(2 * kPi * x / S + phase[b])) band = b;
          }
          canvas.at(y, x) = 0.1 + 0.8 * ((band * 3) % bands) / std::max(1, bands - 1);
          mask.at(y, x) = static_cast<std::uint8_t>(band);
        });
        params = {{"boundaries", base}};
        has_mask = true;
        add_noise(canvas, pixel_sigma, rng);
        break;
      }
      case ToyTask::LANDMARK: {
        WedgeParams w;
        w.apex_x = S * rng.uniform(0.35, 0.55);
        w.apex_y = S * rng.uniform(0.4, 0.6);
        w.theta_upper = -rng.uniform(20.0, 35.0) * kPi / 180.0;
        w.theta_lower = w.theta_upper + rng.uniform(25.0, 45.0) * kPi / 180.0;
        w.spur_distance = S * rng.uniform(0.18, 0.25);
        for_each_pixel(S, [&](int y, int x) {
          const double a = std::atan2(y - w.apex_y, x - w.apex_x);
          const bool chamber = x > w.apex_x && a > w.theta_upper && a < w.theta_lower;
          canvas.at(y, x) = chamber ? 0.05 : 0.55 + 0.1 * rng.uniform();
        });
        const LandmarkSet ls = wedge_landmarks(w);
        stamp_disk(canvas, nullptr, ls.points[0].x, ls.points[0].y, 0.03 * S, 0.95);
        rec.landmarks = ls;
        params = {{"apex_x", w.apex_x},
                  {"apex_y", w.apex_y},
                  {"theta_upper", w.theta_upper},
                  {"theta_lower", w.theta_lower},
                  {"spur_distance", w.spur_distance}};
        add_noise(canvas, pixel_sigma, rng);
        break;
      }
      case ToyTask::BIOMARKER: {
        std::array<double, 4> z{};
        for (double& v : z) v = std::clamp(rng.normal(), -2.5, 2.5);
        for_each_pixel(S, [&](int y, int x) {
          double v = canvas.at(y, x) + 0.06 * z[0];
          if (std::hypot(x - S / 2, y - S / 2) < 0.2 * S) v = 0.5 + 0.1 * z[1];
          v += 0.1 * z[2] * (static_cast<double>(x) / S - 0.5);
          if (x < 0.3 * S && y < 0.3 * S) v = 0.45 + 0.1 * z[3];
          canvas.at(y, x) = v;
        });
        add_noise(canvas, 0.02, rng);
        BiomarkerPanel panel;
        panel.panel_spec_id = default_panel_spec().id;
        const auto& entries = default_panel_spec().entries;
        for (std::size_t b = 0; b < entries.size(); ++b) {
          double standardized = spec.noise_level * rng.normal();
          for (int f = 0; f < 4; ++f) standardized += loadings[b][f] * z[f];
          panel.values[entries[b].name] = entries[b].mean + entries[b].stddev * standardized;
        }
        rec.biomarkers = std::move(panel);
        params = {{"latent", z}};
        break;
      }
      case ToyTask::FORECAST: {
        const double cue = rng.uniform();
        const double delta = rng.uniform(180.0, 1800.0);
        const double dx = S * 0.5, dy = S * 0.5, disc_r = 0.22 * S;
        const double cup_r = (0.3 + 0.6 * cue) * disc_r;
        stamp_disk(canvas, nullptr, dx, dy, disc_r, 0.55);
        stamp_disk(canvas, nullptr, dx, dy, cup_r, 0.95);
        add_noise(canvas, 0.02, rng);
        const int clean = forecast_rule(cue, delta);
        const int noisy = rng.bernoulli(spec.noise_level) ? 1 - clean : clean;
        rec.visit_date = iso_date(static_cast<int>(rng.below(1500)));
        params = {{"cue", cue}, {"delta_days", delta}, {"rule_outcome", clean}};
        m.pairs.push_back({rec.subject_id, rec.id, delta, noisy});
        break;
      }
    }

    rec.toy_params = params;
    write_png(out_dir / rec.image_path, to_image(canvas, spec.channels));
    if (has_mask) {
      rec.mask_path = "masks/" + rec.id + ".png";
      write_mask_png(out_dir / *rec.mask_path, mask);
    }
    m.records.push_back(std::move(rec));
  }
  write_manifest(m, out_dir / "manifest.jsonl");
  return m;
}

}  // namespace vfm
