#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "vfm/decoders.hpp"
#include "vfm/metrics.hpp"
#include "vfm/train.hpp"

namespace vfm {

// Top-level run configuration. Sections are kept as JSON and validated
// eagerly by their own strict parsers; unknown keys anywhere are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> out_dir;
  std::string log_level = "info";
  bool plots = false;
  nlohmann::json data = nlohmann::json::object();
  nlohmann::json encoder = nlohmann::json::object();
  nlohmann::json pretrain = nlohmann::json::object();
  nlohmann::json task = nlohmann::json::object();
  nlohmann::json probe = nlohmann::json::object();
  nlohmann::json sweep = nlohmann::json::object();
  nlohmann::json explain = nlohmann::json::object();
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

struct TaskConfig {
  HeadType type = HeadType::CLASSIFIER;
  int hidden = 0;
  double dice_weight = 1.0;
  int bootstrap = 1000;
  TrainOptions train;
};

nlohmann::json train_options_to_json(const TrainOptions& t);
TrainOptions train_options_from_json(const nlohmann::json& j);
nlohmann::json task_config_to_json(const TaskConfig& t);
TaskConfig task_config_from_json(const nlohmann::json& j);
// Accepts CLASSIFY/SEGMENT/LANDMARK/BIOMARKER/FORECAST as well as head type names.
HeadType parse_task_name(const std::string& name);

struct ReportEnvironment {
  std::string artifact_version;
  std::uint64_t seed = 0;
  std::string config_digest;
  double wall_time_s = 0.0;
};

// report.json = report fields + {"environment", "config"}; curves.csv when
// the report has curves; with plots, one PNG per curve (plot_<name>.png).
void write_report(const MetricReport& report, const std::filesystem::path& out_dir,
                  const ReportEnvironment& env, const nlohmann::json& resolved_config,
                  bool plots = false);
void write_curve_plot(const std::filesystem::path& path, const std::vector<CurvePoint>& curve);

// SHA-256 of the compact dump of a resolved configuration.
std::string config_digest(const nlohmann::json& resolved);

// Entry point of the vfm tool. Exit codes: 0 ok, 2 config error, 3 data
// error, 4 numerical divergence, 1 anything else.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vfm
