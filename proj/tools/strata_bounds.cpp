#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "strata/report.hpp"

namespace {

using namespace strata;

struct Flags {
  std::vector<std::string> inputs;
  std::string sample_a, sample_b;
  std::vector<std::string> presets;
  std::string sim_config;
  std::size_t clusters = 0, cluster_size = 0;
  std::int64_t sim_seed = -1;
  std::string reweight;
  std::size_t bins = 10;
  std::vector<double> bin_edges;
  std::vector<std::string> col_aux;
  std::size_t reps = 2000;
  std::uint64_t seed = 1;
  double alpha = 0.05;
  std::string resample = "cluster", ci = "percentile", format = "text", method = "decomposition",
              smoothing = "none";
  std::size_t threads = 0;
  std::vector<std::string> stats;
  std::string manifest;
  std::string out;
  bool check = false;
  bool raw_shares = false;
};

std::string stem(const std::string& path) { return std::filesystem::path(path).stem().string(); }

void add_common(CLI::App* sub, Flags& f, RunConfig& c) {
  sub->add_option("inputs", f.inputs, "Input CSV files");
  sub->add_option("--sample-a", f.sample_a, "First sample CSV");
  sub->add_option("--sample-b", f.sample_b, "Second sample CSV");
  sub->add_option("--preset", f.presets, "Simulate a calibrated preset (repeatable)")
      ->check(CLI::IsMember(preset_names()));
  sub->add_option("--simulate-config", f.sim_config, "Simulation config JSON")
      ->check(CLI::ExistingFile);
  sub->add_option("--clusters", f.clusters, "Override simulated cluster count");
  sub->add_option("--cluster-size", f.cluster_size, "Override simulated cluster size");
  sub->add_option("--sim-seed", f.sim_seed, "Override simulation seed");
  sub->add_option("--reweight-a-to-b", f.reweight, "Reweight the first sample to the second on this covariate");
  sub->add_option("--source", f.sample_a, "Same as --sample-a");
  sub->add_option("--target", f.sample_b, "Same as --sample-b");
  sub->add_option("--covariate", f.reweight, "Same as --reweight-a-to-b");
  sub->add_option("--bins", f.bins, "Equal-width bin count for reweighting")->check(CLI::PositiveNumber);
  sub->add_option("--bin-edges", f.bin_edges, "Explicit bin edges")->delimiter(',');

  sub->add_option("--col-z", c.schema.z);
  sub->add_option("--col-d", c.schema.d);
  sub->add_option("--col-y", c.schema.y);
  sub->add_option("--col-unit", c.schema.unit_id);
  sub->add_option("--col-cluster", c.schema.cluster);
  sub->add_option("--col-block", c.schema.block);
  sub->add_option("--col-weight", c.schema.weight);
  sub->add_option("--col-aux", f.col_aux, "Aux covariate as name:col (repeatable)");
  sub->add_flag("--aux-unmapped", c.schema.aux_from_unmapped, "Read unmapped columns as aux");

  sub->add_option("--reps", f.reps, "Bootstrap replicates; 0 skips the bootstrap");
  sub->add_option("--seed", f.seed, "Bootstrap seed");
  sub->add_option("--alpha", f.alpha)->check(CLI::Range(0.0, 1.0));
  sub->add_option("--resample", f.resample)->check(CLI::IsMember({"cluster", "unit"}));
  sub->add_option("--ci", f.ci)->check(CLI::IsMember({"percentile", "normal"}));
  sub->add_option("--threads", f.threads, "Worker threads (default STRATA_BOUNDS_THREADS or all cores)");
  sub->add_option("--stat", f.stats, "Statistic to bootstrap (repeatable)");
  sub->add_option("--share-floor", c.bounds.estimator.share_floor);
  sub->add_option("--first-stage-floor", c.bounds.estimator.first_stage_floor);
  sub->add_option("--monotonicity-tolerance", c.bounds.estimator.monotonicity_tolerance);
  sub->add_flag("--raw-shares", f.raw_shares, "Use unclamped shares");
  sub->add_flag("--intersect", c.bounds.intersect, "Intersect decomposition and direct substitutor bounds");
  sub->add_option("--method", f.method)->check(CLI::IsMember({"decomposition", "direct"}));
  sub->add_option("--smoothing", f.smoothing)->check(CLI::IsMember({"none", "kernel"}));
  sub->add_flag("--analytic-se", c.analytic_se, "Add GMM standard errors for the bound endpoints");
  sub->add_option("--line-grid", c.line_grid);
  sub->add_option("--format", f.format)->check(CLI::IsMember({"json", "csv", "text"}));
  sub->add_option("--out", f.out, "Output directory");
  sub->add_option("--manifest", f.manifest, "Rerun from a manifest")->check(CLI::ExistingFile);
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path + ": " + e.what());
  }
}

RunConfig build_config(const std::string& subcommand, Flags& f, RunConfig c) {
  if (!f.manifest.empty()) {
    RunConfig m = run_config_from_json(read_json(f.manifest)["config"]);
    if (!f.out.empty()) m.output_dir = f.out;
    m.bootstrap.threads = f.threads;
    return m;
  }
  c.subcommand = subcommand;
  if (!f.out.empty()) c.output_dir = f.out;
  for (const auto& a : f.col_aux) {
    const auto colon = a.find(':');
    if (colon == std::string::npos) {
      throw Error(ErrorKind::InvalidConfig, "--col-aux expects name:col, got '" + a + "'");
    }
    c.schema.aux.emplace_back(a.substr(0, colon), a.substr(colon + 1));
  }

  std::vector<std::string> csvs;
  if (!f.sample_a.empty()) csvs.push_back(f.sample_a);
  if (!f.sample_b.empty()) csvs.push_back(f.sample_b);
  csvs.insert(csvs.end(), f.inputs.begin(), f.inputs.end());
  for (const auto& p : csvs) c.samples.push_back({stem(p), p, std::nullopt, std::nullopt});

  auto tweak = [&](DgpConfig d) {
    if (f.clusters) d.cluster_count = f.clusters;
    if (f.cluster_size) d.cluster_size = f.cluster_size;
    if (f.sim_seed >= 0) d.seed = static_cast<std::uint64_t>(f.sim_seed);
    return d;
  };
  for (const auto& p : f.presets) c.samples.push_back({p, std::nullopt, tweak(preset(p)), p});
  if (!f.sim_config.empty()) {
    c.samples.push_back({stem(f.sim_config), std::nullopt, tweak(dgp_from_json(read_json(f.sim_config))),
                         std::nullopt});
  }

  if (!f.reweight.empty()) {
    c.reweight_covariate = f.reweight;
    const bool mapped = std::any_of(c.schema.aux.begin(), c.schema.aux.end(),
                                    [&](const auto& a) { return a.first == f.reweight; });
    if (!mapped && !c.schema.aux_from_unmapped) c.schema.aux.emplace_back(f.reweight, f.reweight);
  }
  if (f.bin_edges.empty()) {
    c.bins.bins = f.bins;
  } else {
    c.bins.bins = f.bin_edges;
  }
  c.run_bootstrap = f.reps > 0 && subcommand != "bootstrap";
  c.bootstrap.reps = f.reps;
  c.bootstrap.seed = f.seed;
  c.bootstrap.alpha = f.alpha;
  c.bootstrap.resample_unit = parse_resample_unit(f.resample);
  c.bootstrap.ci_method = parse_ci_method(f.ci);
  c.bootstrap.threads = f.threads;
  c.statistics = f.stats;
  c.bounds.estimator.use_clamped_shares = !f.raw_shares;
  c.bounds.substitutor_method =
      f.method == "direct" ? SubstitutorMethod::direct : SubstitutorMethod::decomposition;
  c.bounds.smoothing = f.smoothing == "kernel" ? Smoothing::gaussian_kernel : Smoothing::none;
  c.format = parse_format(f.format);
  return c;
}

std::string quote(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch == '\n' ? ' ' : ch;
  }
  return out;
}

int run_checks(const RunConfig& config) {
  bool all = true;
  for (const auto& src : config.samples) {
    for (const auto& r : simulation_checks(*src.simulate)) {
      std::cout << (r.passed ? "PASS " : "FAIL ") << src.label << " " << r.name;
      if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
      std::cout << "\n";
      all &= r.passed;
    }
  }
  return all ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Principal-strata trimming bounds for multi-option randomized trials"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  Flags flags;
  RunConfig base;
  const std::vector<std::pair<std::string, std::string>> subs = {
      {"ingest", "Validate and normalize input CSVs"},
      {"reweight", "Reweight the first sample to the second on a covariate"},
      {"estimate", "ITT, control mean, first stage, LATE and strata shares"},
      {"bounds", "Trimming bounds and the bounds line"},
      {"bootstrap", "Bootstrap selected statistics"},
      {"simulate", "Generate synthetic trials with known truth"},
      {"report", "Full pipeline with every table, plot file and manifest"},
  };
  for (const auto& [name, help] : subs) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub, flags, base);
    if (name == "simulate") sub->add_flag("--check", flags.check, "Run the oracle checks instead");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error kind=InvalidConfig code=2 message=\"" << quote(e.what()) << "\"\n";
    return 2;
  }

  try {
    const std::string subcommand = app.get_subcommands().front()->get_name();
    const RunConfig config = build_config(subcommand, flags, base);
    config.validate();
    if (subcommand == "simulate" && flags.check) return run_checks(config);
    const PipelineResult result = run_pipeline(config);
    std::cout << result.stdout_text;
    return 0;
  } catch (const Error& e) {
    std::cerr << "error kind=" << to_string(e.kind()) << " code=" << e.exit_code();
    if (e.row()) std::cerr << " row=" << *e.row();
    std::cerr << " message=\"" << quote(e.what()) << "\"\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error kind=Internal code=1 message=\"" << quote(e.what()) << "\"\n";
    return 1;
  }
}
