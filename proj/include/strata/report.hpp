#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "strata/bounds.hpp"
#include "strata/data_model.hpp"
#include "strata/inference.hpp"
#include "strata/reweighting.hpp"
#include "strata/simulation.hpp"

namespace strata {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

enum class OutputFormat { json, csv, text };

std::string_view to_string(OutputFormat f);
OutputFormat parse_format(std::string_view name);

// One sample the pipeline should analyze.
struct SampleSource {
  std::string label;
  // Exactly one of: a CSV path, a simulation config.
  std::optional<std::string> csv;
  std::optional<DgpConfig> simulate;
  std::optional<std::string> preset;  // informational when simulate came from a preset
};

struct RunConfig {
  std::string subcommand = "report";
  std::vector<SampleSource> samples;
  // Two-sample mode: the first sample is reweighted to the second on this
  // covariate before analysis.
  std::optional<std::string> reweight_covariate;
  BinSpec bins;
  std::string output_dir = "strata-out";
  CsvSchema schema;
  BoundsOptions bounds;
  BootstrapSpec bootstrap;
  // 0 skips the bootstrap.
  bool run_bootstrap = true;
  std::vector<std::string> statistics;
  bool analytic_se = false;
  std::size_t line_grid = 101;
  OutputFormat format = OutputFormat::text;

  // Throws InvalidConfig or InvalidSpec.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

// Materialized samples, after simulation and optional reweighting.
struct LoadedSample {
  std::string label;
  Sample sample;
  std::optional<Truth> truth;  // finite-population truth of a simulated sample
  nlohmann::json notes = nlohmann::json::object();
};

std::vector<LoadedSample> load_samples(const RunConfig& config);

// Per-sample analysis used by the tables.
struct SampleReport {
  std::string label;
  BoundsAnalysis analysis;
  std::vector<EstimateReport> estimates;  // itt, control_mean, first_stage, late
  std::vector<EstimateReport> bound_endpoints;
  std::vector<EstimateReport> analytic;  // GMM standard errors when requested
  std::array<std::array<double, 3>, 2> take_up{};
  std::vector<LinePoint> line;
  std::optional<BootstrapResult> boot;
  std::optional<Truth> truth;
  std::vector<std::string> warnings;
};

SampleReport analyze_sample(const LoadedSample& sample, const RunConfig& config);

std::string estimates_table(const std::vector<SampleReport>& reports);
std::string take_up_table(const std::vector<SampleReport>& reports);
std::string shares_table(const std::vector<SampleReport>& reports);
std::string bounds_table(const std::vector<SampleReport>& reports);

std::string bounds_line_csv(const std::vector<SampleReport>& reports);
std::string streaks_csv(const std::vector<SampleReport>& reports);
std::string bounds_svg(const std::vector<SampleReport>& reports);

nlohmann::json report_json(const std::vector<SampleReport>& reports);
nlohmann::json manifest_json(const RunConfig& config);

struct PipelineResult {
  std::vector<std::string> files;
  std::vector<SampleReport> reports;
  // What the subcommand prints to stdout.
  std::string stdout_text;
};

// Runs a subcommand end to end and writes its files under output_dir.
PipelineResult run_pipeline(const RunConfig& config);

// Oracle checks run by `simulate --check` on one configuration.
struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<CheckResult> simulation_checks(const DgpConfig& config, std::size_t small_instances = 200);

// Serializes JSON the same way every time (2-space indent, trailing newline).
std::string dump(const nlohmann::json& j);
void write_text(const std::string& path, const std::string& text);

}  // namespace strata
