// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>

#include "strata/bounds.hpp"
#include "strata/error.hpp"
#include "strata/gmm.hpp"
#include "strata/inference.hpp"
#include "strata/report.hpp"
#include "strata/reweighting.hpp"
#include "strata/rng.hpp"
#include "strata/simulation.hpp"

using namespace strata;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

DgpConfig mixed_dgp(std::size_t n, std::uint64_t seed) {
  DgpConfig c;
  c.strata_probs = {0.2, 0.2, 0.15, 0.25, 0.2};
  c.outcome_means = {{{0, 0.1, 0.5}, {0.2, 0.4, 0.9}, {0.3, 0.5, 1.2}, {0.1, 0.3, 1.4}, {0.2, 0.6, 1.0}}};
  c.cluster_count = n;
  c.cluster_size = 1;
  c.seed = seed;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1. Share recovery on the t2 preset at 100,000 units.
Outcome share_recovery() {
  DgpConfig c = preset("table7-t2");
  c.cluster_count = 4000;
  const auto t0 = Clock::now();
  const SyntheticPopulation pop = generate(c);
  const StrataShares s = estimate_shares(pop.sample);
  const double secs = seconds_since(t0);
  const auto got = s.as_array();
  const auto truth = pop.super.shares.as_array();
  double worst = 0.0;
  for (std::size_t k = 0; k < got.size(); ++k) worst = std::max(worst, std::abs(got[k] - truth[k]));
  return {worst <= 0.01 && secs < 5.0,
          fmt("n=%zu max |share - truth| = %.4f (tol 0.01), %.2fs (limit 5s)", pop.sample.size(), worst, secs)};
}

// 2. Exact identities on generated samples of varied designs.
Outcome exact_identities() {
  double late_gap = 0.0, share_gap = 0.0, line_gap = 0.0;
  int samples = 0;
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    DgpConfig c = mixed_dgp(1, seed);
    c.cluster_count = 40 + 10 * (seed % 7);
    c.cluster_size = 1 + seed % 12;
    c.icc = 0.05 * static_cast<double>(seed % 5);
    c.blocks = 1 + seed % 3;
    if (c.blocks > 1) {
      c.block_assign_prob.clear();
      for (std::size_t b = 0; b < c.blocks; ++b) c.block_assign_prob.push_back(0.3 + 0.2 * static_cast<double>(b));
    }
    if (seed % 4 == 0) c = preset(seed % 8 == 0 ? "table7-t1" : "table7-t2"), c.seed = seed;
    const Sample s = generate(c).sample;
    const BoundsAnalysis a = analyze_bounds(s);
    ++samples;
    late_gap = std::max(late_gap, std::abs(a.late - a.itt / a.first_stage));
    share_gap = std::max(share_gap, std::abs(a.shares.raw.pi_02 + a.shares.raw.pi_12 - a.first_stage));
    const ShareVector& u = a.shares_used;
    const auto line = bounds_line(a.late, u, {a.complier_effect.lower, a.complier_effect.upper});
    for (const LinePoint& p : {line.front(), line.back()}) {
      line_gap = std::max(line_gap, std::abs(u.pi_02 * p.complier_effect + u.pi_12 * p.substitutor_effect -
                                             (u.pi_02 + u.pi_12) * a.late));
    }
  }
  return {late_gap <= 1e-12 && share_gap <= 1e-12 && line_gap <= 1e-10,
          fmt("%d samples: |LATE - ITT/FS| %.1e (tol 1e-12), |pi02+pi12 - FS| %.1e (tol 1e-12), "
              "line endpoints %.1e (tol 1e-10)",
              samples, late_gap, share_gap, line_gap)};
}

// 3. Brute-force sharpness on 1,000 small instances.
Outcome brute_force() {
  const auto t0 = Clock::now();
  auto rng = substream(31337, 0);
  double worst = 0.0;
  int done = 0;
  for (int k = 0; k < 1000; ++k) {
    SmallInstanceSpec spec;
    spec.max_treated_program = 12;
    spec.integer_levels = k % 3 == 0 ? 5 : 0;
    const SyntheticPopulation pop = small_instance(rng, spec);
    const auto [lo, hi] = brute_force_sharpness(pop);
    const EffectBounds b = complier_outcome_bounds(pop.sample, estimate_shares(pop.sample));
    worst = std::max({worst, std::abs(b.lower - lo), std::abs(b.upper - hi)});
    ++done;
  }
  const double secs = seconds_since(t0);
  return {done == 1000 && worst <= 1e-9 && secs < 60.0,
          fmt("%d instances, max gap %.1e (tol 1e-9), %.2fs (limit 60s)", done, worst, secs)};
}

// 4. Uniform outcomes, equal complier and substitutor shares: U(0,2) mixture.
Outcome uniform_convergence() {
  const auto t0 = Clock::now();
  DgpConfig c = mixed_dgp(50000, 1);
  c.strata_probs = {0.2, 0.2, 0.1, 0.25, 0.25};
  c.family = OutcomeFamily::uniform;
  c.outcome_noise = 2.0 / std::sqrt(12.0);
  c.outcome_means[3] = {0.0, 0.3, 1.0};
  c.outcome_means[4] = {0.2, 0.5, 1.0};
  const BoundsTruth truth = analytic_bounds(c);
  int within = 0;
  double worst = 0.0;
  for (int r = 0; r < 200; ++r) {
    c.seed = 4000 + static_cast<std::uint64_t>(r);
    const EffectBounds b = analyze_bounds(generate(c).sample).complier_outcome;
    const double e = std::max(std::abs(b.lower - 0.5), std::abs(b.upper - 1.5));
    worst = std::max(worst, e);
    within += e <= 0.02;
  }
  const double secs = seconds_since(t0);
  const bool closed_form = std::abs(truth.complier_outcome.first - 0.5) < 1e-8 &&
                           std::abs(truth.complier_outcome.second - 1.5) < 1e-8;
  return {closed_form && within >= 190 && secs < 120.0,
          fmt("analytic [%.6f, %.6f]; %d/200 within 0.02 of [0.5, 1.5] (need 190), worst %.4f, %.1fs (limit 120s)",
              truth.complier_outcome.first, truth.complier_outcome.second, within, worst, secs)};
}

// 5. No substitutors: near-zero width estimated, zero width analytic.
Outcome degenerate_trim() {
  std::vector<std::pair<std::string, DgpConfig>> designs;
  {
    // No adherents: the alternative is never taken, so the estimated pi12 is 0.
    DgpConfig c = mixed_dgp(50000, 1);
    c.strata_probs = {0.35, 0.0, 0.2, 0.45, 0.0};
    designs.emplace_back("no-adherents", c);
  }
  {
    DgpConfig c = mixed_dgp(50000, 1);
    c.strata_probs = {0.25, 0.2, 0.15, 0.4, 0.0};
    designs.emplace_back("normal", c);
  }
  {
    DgpConfig c = preset("table7-t1");
    c.strata_probs = {0.25, 0.1, 0.0, 0.65, 0.0};
    c.cluster_count = 2000;
    designs.emplace_back("clustered", c);
  }
  {
    DgpConfig c = mixed_dgp(50000, 1);
    c.strata_probs = {0.2, 0.3, 0.2, 0.3, 0.0};
    c.family = OutcomeFamily::uniform;
    designs.emplace_back("uniform", c);
  }
  double worst = 0.0, analytic = 0.0;
  int runs = 0, narrow = 0;
  std::string detail;
  for (auto& [name, config] : designs) {
    const BoundsTruth t = analytic_bounds(config);
    analytic = std::max(analytic, t.complier_effect.second - t.complier_effect.first);
    double design_worst = 0.0, max_pi12 = 0.0;
    for (int r = 0; r < 20; ++r) {
      config.seed = 900 + static_cast<std::uint64_t>(r);
      const BoundsAnalysis a = analyze_bounds(generate(config).sample);
      design_worst = std::max(design_worst, a.complier_effect.width());
      max_pi12 = std::max(max_pi12, a.shares_used.pi_12);
      narrow += a.complier_effect.width() < 0.02;
      ++runs;
    }
    worst = std::max(worst, design_worst);
    detail += fmt("%s max width %.4f (max pi12 %.4f); ", name.c_str(), design_worst, max_pi12);
  }
  return {worst < 0.02 && analytic == 0.0,
          detail + fmt("%d/%d samples of 50,000 below 0.02; analytic width %.1e (need 0)", narrow, runs, analytic)};
}

// 6. Cluster bootstrap coverage.
Outcome bootstrap_coverage() {
  const auto t0 = Clock::now();
  DgpConfig c = mixed_dgp(80, 1);
  c.cluster_count = 80;
  c.cluster_size = 15;
  c.icc = 0.3;
  const Truth truth = super_population_truth(c);
  BootstrapSpec spec;
  spec.reps = 1000;
  spec.alpha = 0.05;
  const std::vector<std::string> stats{"itt", "tauL_02", "tauU_02"};
  const double target[] = {truth.itt, truth.bounds.complier_effect.first, truth.bounds.complier_effect.second};
  const int outer = 500;
  int covered[3] = {0, 0, 0};
  int usable[3] = {0, 0, 0};
  for (int r = 0; r < outer; ++r) {
    c.seed = 10000 + static_cast<std::uint64_t>(r);
    const Sample s = generate(c).sample;
    spec.seed = 77 + static_cast<std::uint64_t>(r);
    const BootstrapResult b = bootstrap(s, stats, spec, {}, false);
    for (int k = 0; k < 3; ++k) {
      if (!b.reports[k].ci) continue;
      ++usable[k];
      covered[k] += b.reports[k].ci->first <= target[k] && target[k] <= b.reports[k].ci->second;
    }
  }
  const double secs = seconds_since(t0);
  bool ok = secs < 900.0;
  std::string detail;
  for (int k = 0; k < 3; ++k) {
    const double rate = static_cast<double>(covered[k]) / outer;
    ok = ok && rate >= 0.93 && rate <= 0.97;
    detail += fmt("%s %.3f (%d/%d) ", stats[k].c_str(), rate, covered[k], usable[k]);
  }
  return {ok, detail + fmt("target [0.93, 0.97], %d outer x 1000 reps, %.0fs (limit 900s)", outer, secs)};
}

// 7. GMM machinery.
Outcome gmm_machinery() {
  const Sample s = generate(mixed_dgp(50000, 21)).sample;
  double worst_moment = 0.0, asym = 0.0;
  bool diag = true;
  for (GmmTarget t : {GmmTarget::tauL_02, GmmTarget::tauU_02, GmmTarget::tauL_12, GmmTarget::tauU_12}) {
    const GmmModel m = fit_gmm(s, t);
    const Vector11 g = mean_moments(s, m);
    for (int k = 0; k < kMoments; ++k) {
      if (m.active[k]) worst_moment = std::max(worst_moment, std::abs(g[k]));
      diag = diag && m.V(k, k) >= 0.0;
    }
    asym = std::max(asym, (m.V - m.V.transpose()).cwiseAbs().maxCoeff());
  }
  const GmmModel lower = fit_gmm(s, GmmTarget::tauL_02);
  BootstrapSpec spec;
  spec.reps = 1000;
  spec.seed = 5;
  const EstimateReport boot = bootstrap_ci(s, "tauL_02", spec);
  const double ratio = lower.se / *boot.se;
  return {worst_moment <= 1e-8 && asym == 0.0 && diag && std::abs(ratio - 1.0) <= 0.15,
          fmt("max |mean moment| %.1e (tol 1e-8), V asymmetry %.1e, diag>=0 %s, "
              "tauL_02 se analytic %.5f vs bootstrap %.5f (ratio %.3f, tol 15%%)",
              worst_moment, asym, diag ? "yes" : "no", lower.se, *boot.se, ratio)};
}

// 8. Reweighted bin masses equal the target's.
Outcome reweighting_exactness() {
  double worst = 0.0;
  int fits = 0;
  const std::vector<double> edges{0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 1000.0};
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    DgpConfig a = preset("table7-t1"), b = preset("table7-t2");
    a.seed = seed;
    b.seed = 100 + seed;
    const Sample src = generate(a).sample, tgt = generate(b).sample;
    for (const BinSpec& bins : {BinSpec{edges}, BinSpec{std::size_t{4}}}) {
      DensityRatioModel m;
      try {
        m = fit_density_ratio(src, tgt, "distance", bins);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::UnsupportedShift) continue;
        throw;
      }
      const Sample out = apply_weights(src, m);
      const auto got = weighted_bin_masses(out, m);
      for (std::size_t k = 0; k < got.size(); ++k) worst = std::max(worst, std::abs(got[k] - m.target_density[k]));
      ++fits;
    }
  }
  return {fits >= 20 && worst <= 1e-10, fmt("%d fits, max |mass - target| %.1e (tol 1e-10)", fits, worst)};
}

// Intersection of the segments p0-p1 and q0-q1.
std::optional<std::pair<double, double>> crossing(LinePoint p0, LinePoint p1, LinePoint q0, LinePoint q1) {
  const double rx = p1.substitutor_effect - p0.substitutor_effect, ry = p1.complier_effect - p0.complier_effect;
  const double sx = q1.substitutor_effect - q0.substitutor_effect, sy = q1.complier_effect - q0.complier_effect;
  const double den = rx * sy - ry * sx;
  if (den == 0.0) return std::nullopt;
  const double qx = q0.substitutor_effect - p0.substitutor_effect, qy = q0.complier_effect - p0.complier_effect;
  const double t = (qx * sy - qy * sx) / den;
  const double u = (qx * ry - qy * rx) / den;
  if (t < 0.0 || t > 1.0 || u < 0.0 || u > 1.0) return std::nullopt;
  return std::make_pair(p0.substitutor_effect + t * rx, p0.complier_effect + t * ry);
}

RunConfig preset_report(const fs::path& out, std::size_t threads) {
  RunConfig c;
  c.subcommand = "report";
  for (const std::string name : {"table7-t1", "table7-t2"}) {
    SampleSource s;
    s.label = name;
    s.preset = name;
    s.simulate = preset(name);
    c.samples.push_back(s);
  }
  c.output_dir = out.string();
  c.bootstrap.reps = 1000;
  c.bootstrap.seed = 2024;
  c.bootstrap.threads = threads;
  c.analytic_se = true;
  return c;
}

// 9. End-to-end run on the two calibrated presets.
Outcome paper_shaped_run() {
  const fs::path out = fs::temp_directory_path() / "strata_acceptance_report";
  fs::remove_all(out);
  const PipelineResult r = run_pipeline(preset_report(out, 0));
  const double targets[] = {1.06, 1.04};
  bool ok = true;
  std::string detail;
  for (int k = 0; k < 2; ++k) {
    const SampleReport& s = r.reports[k];
    const auto it = std::find_if(s.estimates.begin(), s.estimates.end(), [](auto& e) { return e.name == "late"; });
    const bool inside = it->ci && it->ci->first <= targets[k] && targets[k] <= it->ci->second;
    ok = ok && inside;
    detail += fmt("%s LATE %.3f [%.3f, %.3f] target %.2f; ", s.label.c_str(), it->point, it->ci->first,
                  it->ci->second, targets[k]);
  }
  const double w1 = r.reports[0].analysis.substitutor_effect.width();
  const double w2 = r.reports[1].analysis.substitutor_effect.width();
  ok = ok && w2 < w1;
  detail += fmt("substitutor width t1 %.3f > t2 %.3f; ", w1, w2);
  const auto& a = r.reports[0].line;
  const auto& b = r.reports[1].line;
  const auto x = crossing(a.front(), a.back(), b.front(), b.back());
  ok = ok && x && x->first > 0.0 && x->second > 0.0;
  detail += x ? fmt("lines cross at (%.3f, %.3f)", x->first, x->second) : std::string("lines do not cross");
  for (const char* f : {"report.json", "estimates.txt", "take_up.txt", "shares.txt", "bounds.txt", "bounds_line.csv",
                        "streaks.csv", "bounds.svg", "manifest.json"}) {
    if (!fs::exists(out / f)) {
      ok = false;
      detail += fmt("; missing %s", f);
    }
  }
  return {ok, detail};
}

// 10. A manifest rerun gives byte-identical outputs at any thread count.
Outcome determinism() {
  const fs::path base = fs::temp_directory_path() / "strata_acceptance_det";
  fs::remove_all(base);
  RunConfig first = preset_report(base / "a", 1);
  first.bootstrap.reps = 300;
  run_pipeline(first);
  const nlohmann::json manifest = nlohmann::json::parse(slurp(base / "a" / "manifest.json"));
  int compared = 0, differing = 0;
  for (std::size_t threads : {1, 4}) {
    for (int rerun = 0; rerun < 2; ++rerun) {
      RunConfig again = run_config_from_json(manifest["config"]);
      const fs::path dir = base / fmt("t%zu_%d", threads, rerun);
      again.output_dir = dir.string();
      again.bootstrap.threads = threads;
      run_pipeline(again);
      for (const auto& f : fs::directory_iterator(base / "a")) {
        const std::string name = f.path().filename().string();
        if (name == "manifest.json") continue;
        ++compared;
        differing += slurp(f.path()) != slurp(dir / name);
      }
    }
  }
  return {compared > 0 && differing == 0,
          fmt("%d file comparisons over 4 reruns (1 and 4 threads), %d differ", compared, differing)};
}

}  // namespace

// Optional arguments pick criteria by number; default runs all of them.
int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"share_recovery", share_recovery},
      {"exact_identities", exact_identities},
      {"brute_force_sharpness", brute_force},
      {"analytic_bound_convergence", uniform_convergence},
      {"degenerate_trim", degenerate_trim},
      {"bootstrap_coverage", bootstrap_coverage},
      {"gmm_machinery", gmm_machinery},
      {"reweighting_exactness", reweighting_exactness},
      {"paper_shaped_run", paper_shaped_run},
      {"determinism", determinism},
  };
  std::vector<std::size_t> picked;
  for (int i = 1; i < argc; ++i) picked.push_back(std::stoul(argv[i]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (!picked.empty() && std::find(picked.begin(), picked.end(), k + 1) == picked.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.passed;
    std::printf("%s %zu %s: %s [%.1fs]\n", o.passed ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
