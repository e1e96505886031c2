#include "strata/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "strata/gmm.hpp"
#include "strata/rng.hpp"

namespace strata {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v, int digits = 3) {
  if (!std::isfinite(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  // Avoid "-0.000".
  if (std::string(buf).find_first_not_of("-0.") == std::string::npos && buf[0] == '-') {
    return std::string(buf + 1);
  }
  return buf;
}

std::string csv_num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

nlohmann::json num(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

const std::vector<std::string> kEstimateStats = {"itt", "control_mean", "first_stage", "late"};
const std::vector<std::string> kBoundStats = {"betaL_02", "betaU_02", "tauL_02",
                                              "tauU_02",  "tauL_12",  "tauU_12"};

}  // namespace

std::string_view to_string(OutputFormat f) {
  switch (f) {
    case OutputFormat::json: return "json";
    case OutputFormat::csv: return "csv";
    case OutputFormat::text: return "text";
  }
  return "text";
}

OutputFormat parse_format(std::string_view name) {
  if (name == "json") return OutputFormat::json;
  if (name == "csv") return OutputFormat::csv;
  if (name == "text") return OutputFormat::text;
  throw Error(ErrorKind::InvalidConfig, "format must be json, csv or text");
}

void RunConfig::validate() const {
  static const std::vector<std::string> subcommands = {"ingest",    "reweight", "estimate", "bounds",
                                                       "bootstrap", "simulate", "report"};
  if (std::find(subcommands.begin(), subcommands.end(), subcommand) == subcommands.end()) {
    throw Error(ErrorKind::InvalidConfig, "unknown subcommand '" + subcommand + "'");
  }
  if (samples.empty()) throw Error(ErrorKind::InvalidConfig, "no input sample given");
  for (const auto& s : samples) {
    if (s.csv.has_value() == s.simulate.has_value()) {
      throw Error(ErrorKind::InvalidConfig,
                  "sample '" + s.label + "' needs exactly one of a CSV path or a simulation");
    }
    if (s.simulate) s.simulate->validate();
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      if (samples[i].label == samples[j].label) {
        throw Error(ErrorKind::InvalidConfig, "duplicate sample label '" + samples[i].label + "'");
      }
    }
  }
  if (reweight_covariate && samples.size() != 2) {
    throw Error(ErrorKind::InvalidConfig, "reweighting needs exactly two samples");
  }
  if (subcommand == "reweight" && !reweight_covariate) {
    throw Error(ErrorKind::InvalidConfig, "reweight needs a covariate");
  }
  if (subcommand == "simulate") {
    for (const auto& s : samples) {
      if (!s.simulate) throw Error(ErrorKind::InvalidConfig, "simulate needs a preset or config");
    }
  }
  auto in_unit = [](double v) { return v >= 0.0 && v < 1.0; };
  const auto& e = bounds.estimator;
  if (!in_unit(e.share_floor) || !in_unit(e.first_stage_floor) || !in_unit(e.monotonicity_tolerance)) {
    throw Error(ErrorKind::InvalidConfig, "floors and tolerances must lie in [0, 1)");
  }
  if (line_grid < 2) throw Error(ErrorKind::InvalidConfig, "line grid needs at least two points");
  if (run_bootstrap || subcommand == "bootstrap") bootstrap.validate();
  for (const auto& s : statistics) {
    if (!is_statistic(s)) throw Error(ErrorKind::InvalidSpec, "unknown statistic '" + s + "'");
  }
  if (bounds.smoothing_grid < 2) throw Error(ErrorKind::InvalidConfig, "smoothing grid too small");
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : c.samples) {
    nlohmann::json j = {{"label", s.label}};
    if (s.csv) j["csv"] = *s.csv;
    if (s.simulate) j["simulate"] = to_json(*s.simulate);
    if (s.preset) j["preset"] = *s.preset;
    samples.push_back(j);
  }
  nlohmann::json bins;
  if (const auto* n = std::get_if<std::size_t>(&c.bins.bins)) {
    bins = *n;
  } else {
    bins = std::get<std::vector<double>>(c.bins.bins);
  }
  nlohmann::json aux = nlohmann::json::array();
  for (const auto& [name, col] : c.schema.aux) aux.push_back({name, col});
  const auto& e = c.bounds.estimator;
  return {
      {"subcommand", c.subcommand},
      {"samples", samples},
      {"reweight_covariate", c.reweight_covariate ? nlohmann::json(*c.reweight_covariate)
                                                  : nlohmann::json(nullptr)},
      {"bins", bins},
      {"output_dir", c.output_dir},
      {"schema",
       {{"z", c.schema.z},
        {"d", c.schema.d},
        {"y", c.schema.y},
        {"unit_id", c.schema.unit_id},
        {"cluster", c.schema.cluster},
        {"block", c.schema.block},
        {"weight", c.schema.weight},
        {"aux", aux},
        {"aux_from_unmapped", c.schema.aux_from_unmapped}}},
      {"estimator",
       {{"share_floor", e.share_floor},
        {"first_stage_floor", e.first_stage_floor},
        {"monotonicity_tolerance", e.monotonicity_tolerance},
        {"use_clamped_shares", e.use_clamped_shares}}},
      {"bounds",
       {{"smoothing", c.bounds.smoothing == Smoothing::none ? "none" : "gaussian_kernel"},
        {"smoothing_grid", c.bounds.smoothing_grid},
        {"inversion_tolerance", c.bounds.inversion_tolerance},
        {"substitutor_method",
         c.bounds.substitutor_method == SubstitutorMethod::decomposition ? "decomposition"
                                                                         : "direct"},
        {"intersect", c.bounds.intersect}}},
      {"bootstrap",
       {{"reps", c.bootstrap.reps},
        {"seed", c.bootstrap.seed},
        {"alpha", c.bootstrap.alpha},
        {"resample_unit", to_string(c.bootstrap.resample_unit)},
        {"ci_method", to_string(c.bootstrap.ci_method)},
        {"max_failure_fraction", c.bootstrap.max_failure_fraction}}},
      {"run_bootstrap", c.run_bootstrap},
      {"statistics", c.statistics},
      {"analytic_se", c.analytic_se},
      {"line_grid", c.line_grid},
      {"format", to_string(c.format)},
  };
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.subcommand = j.value("subcommand", c.subcommand);
    for (const auto& s : j.at("samples")) {
      SampleSource src;
      src.label = s.at("label").get<std::string>();
      if (s.contains("csv")) src.csv = s.at("csv").get<std::string>();
      if (s.contains("simulate")) src.simulate = dgp_from_json(s.at("simulate"));
      if (s.contains("preset")) src.preset = s.at("preset").get<std::string>();
      c.samples.push_back(std::move(src));
    }
    if (j.contains("reweight_covariate") && !j.at("reweight_covariate").is_null()) {
      c.reweight_covariate = j.at("reweight_covariate").get<std::string>();
    }
    if (j.contains("bins")) {
      const auto& b = j.at("bins");
      if (b.is_array()) {
        c.bins.bins = b.get<std::vector<double>>();
      } else {
        c.bins.bins = b.get<std::size_t>();
      }
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("schema")) {
      const auto& s = j.at("schema");
      c.schema.z = s.value("z", c.schema.z);
      c.schema.d = s.value("d", c.schema.d);
      c.schema.y = s.value("y", c.schema.y);
      c.schema.unit_id = s.value("unit_id", c.schema.unit_id);
      c.schema.cluster = s.value("cluster", c.schema.cluster);
      c.schema.block = s.value("block", c.schema.block);
      c.schema.weight = s.value("weight", c.schema.weight);
      for (const auto& a : s.value("aux", nlohmann::json::array())) {
        c.schema.aux.emplace_back(a.at(0).get<std::string>(), a.at(1).get<std::string>());
      }
      c.schema.aux_from_unmapped = s.value("aux_from_unmapped", false);
    }
    if (j.contains("estimator")) {
      const auto& e = j.at("estimator");
      auto& o = c.bounds.estimator;
      o.share_floor = e.value("share_floor", o.share_floor);
      o.first_stage_floor = e.value("first_stage_floor", o.first_stage_floor);
      o.monotonicity_tolerance = e.value("monotonicity_tolerance", o.monotonicity_tolerance);
      o.use_clamped_shares = e.value("use_clamped_shares", o.use_clamped_shares);
    }
    if (j.contains("bounds")) {
      const auto& b = j.at("bounds");
      c.bounds.smoothing = b.value("smoothing", std::string("none")) == "gaussian_kernel"
                               ? Smoothing::gaussian_kernel
                               : Smoothing::none;
      c.bounds.smoothing_grid = b.value("smoothing_grid", c.bounds.smoothing_grid);
      c.bounds.inversion_tolerance = b.value("inversion_tolerance", c.bounds.inversion_tolerance);
      c.bounds.substitutor_method =
          b.value("substitutor_method", std::string("decomposition")) == "direct"
              ? SubstitutorMethod::direct
              : SubstitutorMethod::decomposition;
      c.bounds.intersect = b.value("intersect", false);
    }
    if (j.contains("bootstrap")) {
      const auto& b = j.at("bootstrap");
      c.bootstrap.reps = b.value("reps", c.bootstrap.reps);
      c.bootstrap.seed = b.value("seed", c.bootstrap.seed);
      c.bootstrap.alpha = b.value("alpha", c.bootstrap.alpha);
      c.bootstrap.resample_unit = parse_resample_unit(b.value("resample_unit", std::string("cluster")));
      c.bootstrap.ci_method = parse_ci_method(b.value("ci_method", std::string("percentile")));
      c.bootstrap.max_failure_fraction =
          b.value("max_failure_fraction", c.bootstrap.max_failure_fraction);
    }
    c.run_bootstrap = j.value("run_bootstrap", c.run_bootstrap);
    c.statistics = j.value("statistics", c.statistics);
    c.analytic_se = j.value("analytic_se", c.analytic_se);
    c.line_grid = j.value("line_grid", c.line_grid);
    c.format = parse_format(j.value("format", std::string("text")));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad manifest: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<LoadedSample> load_samples(const RunConfig& config) {
  std::vector<LoadedSample> out;
  for (const auto& src : config.samples) {
    if (src.csv) {
      out.push_back({src.label, ingest_csv(*src.csv, config.schema, src.label), std::nullopt, {}});
    } else {
      SyntheticPopulation pop = generate(*src.simulate);
      LoadedSample ls{src.label, pop.sample.relabel(src.label), pop.finite, {}};
      ls.notes["super_population_truth"] = to_json(pop.super);
      if (src.preset) ls.notes["preset"] = *src.preset;
      out.push_back(std::move(ls));
    }
  }
  if (config.reweight_covariate) {
    const DensityRatioModel model =
        fit_density_ratio(out[0].sample, out[1].sample, *config.reweight_covariate, config.bins);
    Sample reweighted = apply_weights(out[0].sample, model);
    const auto achieved = weighted_bin_masses(reweighted, model);
    double gap = 0.0;
    for (std::size_t b = 0; b < achieved.size(); ++b) {
      gap = std::max(gap, std::abs(achieved[b] - model.target_density[b]));
    }
    out[0].notes["reweighting"] = to_json(model);
    out[0].notes["reweighting"]["max_bin_mass_gap"] = gap;
    out[0].notes["reweighting"]["dropped_units"] = out[0].sample.size() - reweighted.size();
    out[0].label += "_reweighted";
    out[0].sample = reweighted.relabel(out[0].label);
    // Reweighting changes the population, so the drawn truth no longer applies.
    out[0].truth.reset();
  }
  return out;
}

SampleReport analyze_sample(const LoadedSample& ls, const RunConfig& config) {
  SampleReport r;
  r.label = ls.label;
  r.truth = ls.truth;
  const Sample& s = ls.sample;
  r.analysis = analyze_bounds(s, config.bounds);
  const BoundsAnalysis& a = r.analysis;
  for (int z = 0; z < 2; ++z) {
    for (int d = 0; d < 3; ++d) r.take_up[z][d] = a.cells.take_up(z, d);
  }
  r.warnings = a.shares.diagnostics;

  const double floor = config.bounds.estimator.share_floor;
  if (a.shares_used.pi_02 == 0.0) {
    r.line = {{a.late, kNaN}};
  } else if (!(a.shares_used.pi_12 > floor)) {
    r.line = {{kNaN, a.complier_effect.lower}};
  } else {
    r.line = bounds_line(a.late, a.shares_used, {a.complier_effect.lower, a.complier_effect.upper},
                         config.line_grid);
  }

  const double points[] = {a.itt, a.control_mean, a.first_stage, a.late};
  for (std::size_t k = 0; k < kEstimateStats.size(); ++k) {
    EstimateReport e;
    e.name = kEstimateStats[k];
    e.point = points[k];
    r.estimates.push_back(e);
  }
  const double ends[] = {a.complier_outcome.lower, a.complier_outcome.upper,
                         a.complier_effect.lower,  a.complier_effect.upper,
                         a.substitutor_effect.lower, a.substitutor_effect.upper};
  for (std::size_t k = 0; k < kBoundStats.size(); ++k) {
    EstimateReport e;
    e.name = kBoundStats[k];
    e.point = ends[k];
    r.bound_endpoints.push_back(e);
  }

  if (config.run_bootstrap) {
    std::vector<std::string> names = kEstimateStats;
    names.insert(names.end(), kBoundStats.begin(), kBoundStats.end());
    r.boot = bootstrap(s, names, config.bootstrap, config.bounds, false);
    for (std::size_t k = 0; k < names.size(); ++k) {
      const EstimateReport& b = r.boot->reports[k];
      EstimateReport& dst = k < kEstimateStats.size() ? r.estimates[k]
                                                      : r.bound_endpoints[k - kEstimateStats.size()];
      dst = b;
      dst.point = k < kEstimateStats.size() ? points[k] : ends[k - kEstimateStats.size()];
      if (r.boot->errors[k] && std::isfinite(dst.point)) {
        r.warnings.push_back("bootstrap " + names[k] + ": " + *r.boot->errors[k]);
      }
    }
  } else {
    r.estimates[0].se = itt_cluster_robust_se(s);
    r.estimates[0].meta["se_method"] = "cluster_robust_linearization";
  }

  if (config.analytic_se) {
    for (GmmTarget t : {GmmTarget::tauL_02, GmmTarget::tauU_02, GmmTarget::tauL_12,
                        GmmTarget::tauU_12}) {
      try {
        GmmOptions g;
        g.estimator = config.bounds.estimator;
        r.analytic.push_back(asymptotic_variance(s, t, g));
      } catch (const Error& e) {
        r.warnings.push_back(std::string("analytic ") + std::string(to_string(t)) + ": " + e.what());
      }
    }
  }
  return r;
}

namespace {

std::string table(const std::string& title, const std::vector<std::string>& columns,
                  const std::vector<std::vector<std::string>>& rows) {
  std::size_t first = title.size();
  for (const auto& row : rows) first = std::max(first, row.front().size());
  first += 2;
  std::vector<std::size_t> width(columns.size(), 0);
  for (std::size_t c = 0; c < columns.size(); ++c) {
    width[c] = columns[c].size();
    for (const auto& row : rows) width[c] = std::max(width[c], row[c + 1].size());
    width[c] += 2;
  }
  std::ostringstream out;
  out << pad(title, first);
  for (std::size_t c = 0; c < columns.size(); ++c) out << pad(columns[c], width[c]);
  out << "\n";
  std::size_t total = first;
  for (auto w : width) total += w;
  out << std::string(total, '-') << "\n";
  for (const auto& row : rows) {
    std::string line = pad(row[0], first);
    for (std::size_t c = 0; c < columns.size(); ++c) line += pad(row[c + 1], width[c]);
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << "\n";
  }
  return out.str();
}

std::vector<std::string> labels(const std::vector<SampleReport>& reports) {
  std::vector<std::string> l;
  for (const auto& r : reports) l.push_back(r.label);
  return l;
}

// Point, then "(se)" and "[lo, hi]" lines when available.
void add_estimate_rows(std::vector<std::vector<std::string>>& rows, const std::string& name,
                       const std::vector<const EstimateReport*>& cells) {
  std::vector<std::string> point{name}, se{""}, ci{""};
  bool any_se = false, any_ci = false;
  for (const auto* e : cells) {
    point.push_back(e ? fmt(e->point) : "-");
    se.push_back(e && e->se ? "(" + fmt(*e->se) + ")" : "");
    ci.push_back(e && e->ci ? "[" + fmt(e->ci->first) + ", " + fmt(e->ci->second) + "]" : "");
    any_se |= e && e->se.has_value();
    any_ci |= e && e->ci.has_value();
  }
  rows.push_back(point);
  if (any_se) rows.push_back(se);
  if (any_ci) rows.push_back(ci);
}

}  // namespace

std::string estimates_table(const std::vector<SampleReport>& reports) {
  static const char* names[] = {"ITT", "Control mean", "First stage", "LATE"};
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<const EstimateReport*> cells;
    for (const auto& r : reports) cells.push_back(&r.estimates[k]);
    add_estimate_rows(rows, names[k], cells);
  }
  return table("Estimates", labels(reports), rows);
}

std::string take_up_table(const std::vector<SampleReport>& reports) {
  static const char* arms[] = {"Control", "Treated"};
  static const char* options[] = {"no school", "alternative", "program"};
  std::vector<std::vector<std::string>> rows;
  for (int z = 0; z < 2; ++z) {
    for (int d = 0; d < 3; ++d) {
      std::vector<std::string> row{std::string(arms[z]) + ": " + options[d]};
      for (const auto& r : reports) row.push_back(fmt(r.take_up[z][d]));
      rows.push_back(row);
    }
  }
  return table("Take-up by arm", labels(reports), rows);
}

std::string shares_table(const std::vector<SampleReport>& reports) {
  static const char* names[] = {"Never takers (0,0)", "Adherents (1,1)", "Always takers (2,2)",
                                "Compliers (0,2)", "Substitutors (1,2)"};
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < 5; ++k) {
    std::vector<std::string> row{names[k]};
    std::vector<std::string> raw{"  raw"};
    bool differs = false;
    for (const auto& r : reports) {
      const double used = r.analysis.shares_used.as_array()[k];
      const double rv = r.analysis.shares.raw.as_array()[k];
      row.push_back(fmt(used));
      raw.push_back(fmt(rv));
      differs |= fmt(used) != fmt(rv);
    }
    rows.push_back(row);
    if (differs) rows.push_back(raw);
  }
  return table("Strata shares", labels(reports), rows);
}

std::string bounds_table(const std::vector<SampleReport>& reports) {
  static const char* names[] = {"E[Y(2)|complier] lower", "E[Y(2)|complier] upper",
                                "Complier effect lower",  "Complier effect upper",
                                "Substitutor effect lower", "Substitutor effect upper"};
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < kBoundStats.size(); ++k) {
    std::vector<const EstimateReport*> cells;
    for (const auto& r : reports) cells.push_back(&r.bound_endpoints[k]);
    add_estimate_rows(rows, names[k], cells);
  }
  std::vector<std::string> mu0{"mu0 (complier Y(0))"}, mu1{"mu1 (substitutor Y(1))"},
      c1{"Cutpoint c1"}, c2{"Cutpoint c2"};
  for (const auto& r : reports) {
    mu0.push_back(fmt(r.analysis.mu0));
    mu1.push_back(r.analysis.mu1 ? fmt(*r.analysis.mu1) : "-");
    c1.push_back(fmt(r.analysis.complier_outcome.cutpoints.c1));
    c2.push_back(fmt(r.analysis.complier_outcome.cutpoints.c2));
  }
  rows.push_back(mu0);
  rows.push_back(mu1);
  rows.push_back(c1);
  rows.push_back(c2);
  bool any_gmm = false;
  for (const auto& r : reports) any_gmm |= !r.analytic.empty();
  if (any_gmm) {
    for (const char* t : {"tauL_02", "tauU_02", "tauL_12", "tauU_12"}) {
      std::vector<std::string> row{std::string("Analytic SE ") + t};
      for (const auto& r : reports) {
        auto it = std::find_if(r.analytic.begin(), r.analytic.end(),
                               [&](const EstimateReport& e) { return e.name == t; });
        row.push_back(it != r.analytic.end() && it->se ? fmt(*it->se) : "-");
      }
      rows.push_back(row);
    }
  }
  return table("Bounds", labels(reports), rows);
}

std::string bounds_line_csv(const std::vector<SampleReport>& reports) {
  std::ostringstream out;
  out << "sample,index,substitutor_effect,complier_effect\n";
  for (const auto& r : reports) {
    for (std::size_t k = 0; k < r.line.size(); ++k) {
      out << r.label << "," << k << "," << csv_num(r.line[k].substitutor_effect) << ","
          << csv_num(r.line[k].complier_effect) << "\n";
    }
  }
  return out.str();
}

std::string streaks_csv(const std::vector<SampleReport>& reports) {
  static const std::vector<std::string> cols = {"late", "tauL_02", "tauU_02", "tauL_12", "tauU_12"};
  std::ostringstream out;
  out << "sample,replicate";
  for (const auto& c : cols) out << "," << c;
  out << "\n";
  for (const auto& r : reports) {
    if (!r.boot) continue;
    std::vector<std::size_t> idx;
    for (const auto& c : cols) {
      idx.push_back(static_cast<std::size_t>(
          std::find(r.boot->names.begin(), r.boot->names.end(), c) - r.boot->names.begin()));
    }
    const std::size_t reps = r.boot->replicates.front().size();
    for (std::size_t rep = 0; rep < reps; ++rep) {
      out << r.label << "," << rep;
      for (std::size_t k : idx) out << "," << csv_num(r.boot->replicates[k][rep]);
      out << "\n";
    }
  }
  return out.str();
}

namespace {

double nice_step(double span) {
  const double raw = span / 6.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (m * mag >= raw) return m * mag;
  }
  return 10.0 * mag;
}

}  // namespace

std::string bounds_svg(const std::vector<SampleReport>& reports) {
  static const char* colors[] = {"#c0392b", "#2c6fbb", "#2e8b57", "#d68910"};
  static const char* dashes[] = {"", "8,5", "2,4", "10,3,2,3"};
  const double W = 640, H = 480, left = 70, right = 20, top = 30, bottom = 60;

  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  bool first = true;
  auto extend = [&](double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    if (first) {
      xmin = xmax = x;
      ymin = ymax = y;
      first = false;
    }
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  };
  for (const auto& r : reports) {
    for (const auto& p : r.line) extend(p.substitutor_effect, p.complier_effect);
  }
  extend(0.0, 0.0);
  const double padx = std::max(0.25, 0.15 * (xmax - xmin));
  const double pady = std::max(0.25, 0.15 * (ymax - ymin));
  xmin -= padx;
  xmax += padx;
  ymin -= pady;
  ymax += pady;
  auto X = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (W - left - right); };
  auto Y = [&](double y) { return H - bottom - (y - ymin) / (ymax - ymin) * (H - top - bottom); };
  auto f2 = [](double v) { return fmt(v, 2); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<clipPath id=\"plot\"><rect x=\"" << left << "\" y=\"" << top << "\" width=\""
    << W - left - right << "\" height=\"" << H - top - bottom << "\"/></clipPath>\n";

  const double xs = nice_step(xmax - xmin), ys = nice_step(ymax - ymin);
  for (double x = std::ceil(xmin / xs) * xs; x <= xmax; x += xs) {
    s << "<line x1=\"" << f2(X(x)) << "\" y1=\"" << top << "\" x2=\"" << f2(X(x)) << "\" y2=\""
      << H - bottom << "\" stroke=\"#eeeeee\"/>\n";
    s << "<text x=\"" << f2(X(x)) << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\">"
      << fmt(x, 2) << "</text>\n";
  }
  for (double y = std::ceil(ymin / ys) * ys; y <= ymax; y += ys) {
    s << "<line x1=\"" << left << "\" y1=\"" << f2(Y(y)) << "\" x2=\"" << W - right << "\" y2=\""
      << f2(Y(y)) << "\" stroke=\"#eeeeee\"/>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << f2(Y(y) + 4) << "\" text-anchor=\"end\">"
      << fmt(y, 2) << "</text>\n";
  }
  s << "<line x1=\"" << f2(X(0)) << "\" y1=\"" << top << "\" x2=\"" << f2(X(0)) << "\" y2=\""
    << H - bottom << "\" stroke=\"#888888\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << f2(Y(0)) << "\" x2=\"" << W - right << "\" y2=\""
    << f2(Y(0)) << "\" stroke=\"#888888\"/>\n";

  s << "<g clip-path=\"url(#plot)\">\n";
  for (std::size_t k = 0; k < reports.size(); ++k) {
    const auto& r = reports[k];
    const char* color = colors[k % 4];
    if (r.boot) {
      auto col = [&](const char* name) {
        return static_cast<std::size_t>(
            std::find(r.boot->names.begin(), r.boot->names.end(), name) - r.boot->names.begin());
      };
      const auto& lo02 = r.boot->replicates[col("tauL_02")];
      const auto& hi02 = r.boot->replicates[col("tauU_02")];
      const auto& lo12 = r.boot->replicates[col("tauL_12")];
      const auto& hi12 = r.boot->replicates[col("tauU_12")];
      const std::size_t n = std::min<std::size_t>(lo02.size(), 200);
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(lo02[i]) || !std::isfinite(hi12[i]) || !std::isfinite(hi02[i]) ||
            !std::isfinite(lo12[i])) {
          continue;
        }
        s << "<line x1=\"" << f2(X(hi12[i])) << "\" y1=\"" << f2(Y(lo02[i])) << "\" x2=\""
          << f2(X(lo12[i])) << "\" y2=\"" << f2(Y(hi02[i])) << "\" stroke=\"" << color
          << "\" stroke-opacity=\"0.06\"/>\n";
      }
    }
    std::ostringstream pts;
    for (const auto& p : r.line) {
      if (std::isfinite(p.substitutor_effect) && std::isfinite(p.complier_effect)) {
        pts << f2(X(p.substitutor_effect)) << "," << f2(Y(p.complier_effect)) << " ";
      }
    }
    std::string points = pts.str();
    if (!points.empty()) points.pop_back();
    s << "<polyline points=\"" << points << "\" fill=\"none\" stroke=\"" << color
      << "\" stroke-width=\"2.5\"";
    if (*dashes[k % 4]) s << " stroke-dasharray=\"" << dashes[k % 4] << "\"";
    s << "/>\n";
  }
  s << "</g>\n";

  for (std::size_t k = 0; k < reports.size(); ++k) {
    const double ly = top + 14 + 18 * static_cast<double>(k);
    s << "<line x1=\"" << W - right - 150 << "\" y1=\"" << ly - 4 << "\" x2=\"" << W - right - 120
      << "\" y2=\"" << ly - 4 << "\" stroke=\"" << colors[k % 4] << "\" stroke-width=\"2.5\"";
    if (*dashes[k % 4]) s << " stroke-dasharray=\"" << dashes[k % 4] << "\"";
    s << "/>\n<text x=\"" << W - right - 114 << "\" y=\"" << ly << "\">" << reports[k].label
      << "</text>\n";
  }
  s << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 18
    << "\" text-anchor=\"middle\">Substitutor effect</text>\n";
  s << "<text transform=\"translate(18," << (top + H - bottom) / 2
    << ") rotate(-90)\" text-anchor=\"middle\">Complier effect</text>\n";
  s << "</svg>\n";
  return s.str();
}

nlohmann::json report_json(const std::vector<SampleReport>& reports) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& r : reports) {
    const BoundsAnalysis& a = r.analysis;
    nlohmann::json j;
    j["label"] = r.label;
    nlohmann::json est = nlohmann::json::array();
    for (const auto& e : r.estimates) est.push_back(to_json(e));
    j["estimates"] = est;
    j["take_up"] = {{"control", r.take_up[0]}, {"treated", r.take_up[1]}};
    j["shares"] = to_json(a.shares);
    j["shares_used"] = {{"pi_00", a.shares_used.pi_00}, {"pi_11", a.shares_used.pi_11},
                        {"pi_22", a.shares_used.pi_22}, {"pi_02", a.shares_used.pi_02},
                        {"pi_12", a.shares_used.pi_12}};
    nlohmann::json ends = nlohmann::json::array();
    for (const auto& e : r.bound_endpoints) ends.push_back(to_json(e));
    j["bound_endpoints"] = ends;
    j["bounds"] = {{"complier_outcome", to_json(a.complier_outcome)},
                   {"complier_effect", to_json(a.complier_effect)},
                   {"substitutor_effect", to_json(a.substitutor_effect)}};
    if (a.substitutor_direct) j["bounds"]["substitutor_direct"] = to_json(*a.substitutor_direct);
    if (a.complier_effect_raw_shares) {
      j["bounds"]["complier_effect_raw_shares"] = {a.complier_effect_raw_shares->first,
                                                   a.complier_effect_raw_shares->second};
    }
    j["mu0"] = num(a.mu0);
    j["mu1"] = a.mu1 ? num(*a.mu1) : nlohmann::json(nullptr);
    nlohmann::json line = nlohmann::json::array();
    for (const auto& p : r.line) line.push_back({num(p.substitutor_effect), num(p.complier_effect)});
    j["bounds_line"] = line;
    if (!r.analytic.empty()) {
      nlohmann::json an = nlohmann::json::array();
      for (const auto& e : r.analytic) an.push_back(to_json(e));
      j["analytic"] = an;
    }
    if (r.truth) j["truth"] = to_json(*r.truth);
    j["warnings"] = r.warnings;
    samples.push_back(j);
  }
  return {{"schema_version", kSchemaVersion}, {"samples", samples}};
}

nlohmann::json manifest_json(const RunConfig& config) {
  return {{"schema_version", kSchemaVersion},
          {"tool", "strata-bounds"},
          {"version", kToolVersion},
          {"config", to_json(config)}};
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

namespace {

struct Writer {
  fs::path dir;
  std::vector<std::string> files;

  void operator()(const std::string& name, const std::string& text) {
    const std::string path = (dir / name).string();
    write_text(path, text);
    files.push_back(path);
  }
};

nlohmann::json ingest_summary(const LoadedSample& ls) {
  const Sample& s = ls.sample;
  nlohmann::json blocks = nlohmann::json::array();
  for (std::size_t b = 0; b < s.block_count(); ++b) {
    blocks.push_back({{"block", s.block_name(b)}, {"propensity", num(s.block_propensity(b))}});
  }
  std::array<std::array<std::size_t, 3>, 2> counts{};
  for (std::size_t i = 0; i < s.size(); ++i) ++counts[s.z()[i]][s.d()[i]];
  return {{"label", ls.label},
          {"units", s.size()},
          {"clusters", s.cluster_count()},
          {"blocks", blocks},
          {"cell_counts", {{"control", counts[0]}, {"treated", counts[1]}}},
          {"aux", s.aux_names()}};
}

std::string all_tables(const std::vector<SampleReport>& reports) {
  return estimates_table(reports) + "\n" + take_up_table(reports) + "\n" + shares_table(reports) +
         "\n" + bounds_table(reports);
}

std::string warnings_text(const std::vector<SampleReport>& reports) {
  std::string out;
  for (const auto& r : reports) {
    for (const auto& w : r.warnings) out += "warning [" + r.label + "]: " + w + "\n";
  }
  return out;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& config) {
  config.validate();
  // `reweight --out file.csv` names the weighted CSV directly; its sidecars
  // go next to it.
  const fs::path out_path(config.output_dir);
  const bool single_file = config.subcommand == "reweight" && out_path.extension() == ".csv";
  const fs::path dir = single_file ? out_path.parent_path() : out_path;
  std::error_code ec;
  if (!dir.empty()) fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  Writer write{dir, {}};
  PipelineResult result;
  std::vector<LoadedSample> samples = load_samples(config);
  const std::string& cmd = config.subcommand;

  if (cmd == "ingest") {
    nlohmann::json summary = {{"schema_version", kSchemaVersion}, {"samples", nlohmann::json::array()}};
    for (const auto& ls : samples) {
      write(ls.label + ".csv", to_csv(ls.sample));
      summary["samples"].push_back(ingest_summary(ls));
    }
    write("ingest.json", dump(summary));
    result.stdout_text = dump(summary);
  } else if (cmd == "reweight") {
    nlohmann::json j = {{"schema_version", kSchemaVersion},
                        {"sample", samples[0].label},
                        {"reweighting", samples[0].notes["reweighting"]}};
    if (single_file) {
      const std::string base = out_path.stem().string();
      write(out_path.filename().string(), to_csv(samples[0].sample));
      write(base + ".model.json", dump(j));
      write(base + ".manifest.json", dump(manifest_json(config)));
      result.files = write.files;
      result.stdout_text = dump(j);
      return result;
    }
    write(samples[0].label + ".csv", to_csv(samples[0].sample));
    write("reweight.json", dump(j));
    result.stdout_text = dump(j);
  } else if (cmd == "simulate") {
    for (std::size_t k = 0; k < samples.size(); ++k) {
      const auto& ls = samples[k];
      write(ls.label + ".csv", to_csv(ls.sample));
      nlohmann::json truth = {{"schema_version", kSchemaVersion},
                              {"label", ls.label},
                              {"config", to_json(*config.samples[k].simulate)},
                              {"finite_population", to_json(*ls.truth)},
                              {"super_population", ls.notes["super_population_truth"]}};
      write(ls.label + "_truth.json", dump(truth));
      result.stdout_text += dump(truth);
    }
  } else if (cmd == "bootstrap") {
    const std::vector<std::string> names =
        config.statistics.empty() ? std::vector<std::string>{"itt"} : config.statistics;
    nlohmann::json j = {{"schema_version", kSchemaVersion}, {"samples", nlohmann::json::array()}};
    std::ostringstream reps;
    reps << "sample,replicate";
    for (const auto& n : names) reps << "," << n;
    reps << "\n";
    for (const auto& ls : samples) {
      const BootstrapResult b = bootstrap(ls.sample, names, config.bootstrap, config.bounds, true);
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& r : b.reports) arr.push_back(to_json(r));
      j["samples"].push_back({{"label", ls.label}, {"reports", arr}});
      for (std::size_t r = 0; r < config.bootstrap.reps; ++r) {
        reps << ls.label << "," << r;
        for (std::size_t s = 0; s < names.size(); ++s) reps << "," << csv_num(b.replicates[s][r]);
        reps << "\n";
      }
    }
    write("bootstrap.json", dump(j));
    write("replicates.csv", reps.str());
    result.stdout_text = dump(j);
  } else {
    for (const auto& ls : samples) result.reports.push_back(analyze_sample(ls, config));
    const auto& reports = result.reports;
    nlohmann::json full = report_json(reports);
    for (std::size_t k = 0; k < samples.size(); ++k) {
      if (!samples[k].notes.empty()) full["samples"][k]["notes"] = samples[k].notes;
    }
    if (cmd == "estimate") {
      nlohmann::json j = {{"schema_version", kSchemaVersion}, {"samples", nlohmann::json::array()}};
      for (const auto& s : full["samples"]) {
        j["samples"].push_back({{"label", s["label"]},
                                {"estimates", s["estimates"]},
                                {"take_up", s["take_up"]},
                                {"shares", s["shares"]}});
      }
      const std::string text = estimates_table(reports) + "\n" + take_up_table(reports) + "\n" +
                               shares_table(reports);
      write("estimates.json", dump(j));
      write("estimates.txt", text);
      result.stdout_text = config.format == OutputFormat::json ? dump(j) : text;
    } else if (cmd == "bounds") {
      nlohmann::json j = {{"schema_version", kSchemaVersion}, {"samples", nlohmann::json::array()}};
      for (const auto& s : full["samples"]) {
        j["samples"].push_back({{"label", s["label"]},
                                {"bounds", s["bounds"]},
                                {"bound_endpoints", s["bound_endpoints"]},
                                {"mu0", s["mu0"]},
                                {"mu1", s["mu1"]},
                                {"bounds_line", s["bounds_line"]}});
        if (s.contains("analytic")) j["samples"].back()["analytic"] = s["analytic"];
      }
      write("bounds.json", dump(j));
      write("bounds.txt", bounds_table(reports));
      write("bounds_line.csv", bounds_line_csv(reports));
      if (config.run_bootstrap) write("streaks.csv", streaks_csv(reports));
      write("bounds.svg", bounds_svg(reports));
      result.stdout_text = config.format == OutputFormat::json  ? dump(j)
                           : config.format == OutputFormat::csv ? bounds_line_csv(reports)
                                                                : bounds_table(reports);
    } else {
      write("report.json", dump(full));
      write("estimates.txt", estimates_table(reports));
      write("take_up.txt", take_up_table(reports));
      write("shares.txt", shares_table(reports));
      write("bounds.txt", bounds_table(reports));
      write("bounds_line.csv", bounds_line_csv(reports));
      if (config.run_bootstrap) write("streaks.csv", streaks_csv(reports));
      write("bounds.svg", bounds_svg(reports));
      result.stdout_text = config.format == OutputFormat::json  ? dump(full)
                           : config.format == OutputFormat::csv ? bounds_line_csv(reports)
                                                                : all_tables(reports);
    }
    result.stdout_text += warnings_text(reports);
  }
  write("manifest.json", dump(manifest_json(config)));
  result.files = write.files;
  return result;
}

}  // namespace strata

namespace strata {

std::vector<CheckResult> simulation_checks(const DgpConfig& config, std::size_t small_instances) {
  std::vector<CheckResult> out;
  auto add = [&](std::string name, bool ok, std::string detail) {
    out.push_back({std::move(name), ok, std::move(detail)});
  };
  const SyntheticPopulation pop = generate(config);
  const Sample& s = pop.sample;

  // Take-up must follow the drawn strata and Y must be the realized potential outcome.
  bool consistent = true;
  for (std::size_t i = 0; i < s.size() && consistent; ++i) {
    consistent = take_up(pop.strata[i], s.z()[i]) == s.d()[i] && pop.potential[i][s.d()[i]] == s.y()[i];
  }
  add("take_up_and_outcomes_consistent", consistent, "");

  const EstimatorOptions est;
  const CellMeans cells = cell_means(s);
  const StrataShares shares = shares_from_cells(cells, est);
  const double itt = itt_from_cells(cells), fs = first_stage_from_cells(cells);
  try {
    const double late = late_from_cells(cells, est);
    const double gap = std::abs(late - itt / fs);
    add("late_equals_itt_over_first_stage", gap <= 1e-12 * std::max(1.0, std::abs(late)),
        "gap " + csv_num(gap));
  } catch (const Error& e) {
    add("late_equals_itt_over_first_stage", false, e.what());
  }
  const double share_gap = std::abs(shares.raw.pi_02 + shares.raw.pi_12 - fs);
  add("shares_sum_to_first_stage", share_gap <= 1e-12, "gap " + csv_num(share_gap));

  // Sampling noise of a share contrast is about 1/sqrt(n); allow six of those.
  const double tol = std::max(0.01, 6.0 / std::sqrt(static_cast<double>(s.size())));
  double worst = 0.0;
  const auto est_sh = shares.raw.as_array(), true_sh = pop.finite.shares.as_array();
  for (std::size_t k = 0; k < est_sh.size(); ++k) worst = std::max(worst, std::abs(est_sh[k] - true_sh[k]));
  add("shares_near_finite_truth", worst <= tol, "max gap " + fmt(worst, 4) + " tol " + fmt(tol, 4));

  try {
    const BoundsTruth b = analytic_bounds(config);
    const Truth& t = pop.super;
    const double eps = 1e-9;
    const bool c_in = t.tau_02 >= b.complier_effect.first - eps && t.tau_02 <= b.complier_effect.second + eps;
    const bool s_in = t.tau_12 >= b.substitutor_effect.first - eps &&
                      t.tau_12 <= b.substitutor_effect.second + eps;
    add("analytic_bounds_cover_truth", c_in && s_in,
        "tau02 " + fmt(t.tau_02) + " in [" + fmt(b.complier_effect.first) + ", " +
            fmt(b.complier_effect.second) + "], tau12 " + fmt(t.tau_12) + " in [" +
            fmt(b.substitutor_effect.first) + ", " + fmt(b.substitutor_effect.second) + "]");
  } catch (const Error& e) {
    add("analytic_bounds_cover_truth", true, std::string("skipped: ") + e.what());
  }

  try {
    const BoundsAnalysis a = analyze_bounds(s, {});
    if (a.shares_used.pi_02 > 0.0 && a.shares_used.pi_12 > est.share_floor) {
      const auto line = bounds_line(a.late, a.shares_used,
                                    {a.complier_effect.lower, a.complier_effect.upper}, 11);
      const double fsu = a.shares_used.pi_02 + a.shares_used.pi_12;
      double g = 0.0;
      for (const auto& p : line) {
        g = std::max(g, std::abs(a.shares_used.pi_02 * p.complier_effect +
                                 a.shares_used.pi_12 * p.substitutor_effect - fsu * a.late));
      }
      add("bounds_line_decomposes_late", g <= 1e-10, "gap " + csv_num(g));
    } else {
      add("bounds_line_decomposes_late", true, "skipped: degenerate shares");
    }
  } catch (const Error& e) {
    add("bounds_line_decomposes_late", true, std::string("skipped: ") + e.what());
  }

  std::mt19937_64 rng = substream(config.seed, 0xb10c);
  double sharp_gap = 0.0;
  for (std::size_t k = 0; k < small_instances; ++k) {
    const SyntheticPopulation small = small_instance(rng);
    const auto [lo, hi] = brute_force_sharpness(small);
    const StrataShares sh = estimate_shares(small.sample);
    if (!(sh.pi_02 > 0.0)) continue;
    const EffectBounds b = complier_outcome_bounds(small.sample, sh, {});
    sharp_gap = std::max({sharp_gap, std::abs(b.lower - lo), std::abs(b.upper - hi)});
  }
  add("trimming_bounds_sharp", sharp_gap <= 1e-9, "max gap " + csv_num(sharp_gap));
  return out;
}

}  // namespace strata
