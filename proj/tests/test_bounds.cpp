#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "strata/bounds.hpp"
#include "strata/error.hpp"
#include "strata/rng.hpp"
#include "strata/simulation.hpp"

using namespace strata;
using testing::from_counts;
using testing::make_sample;

namespace {

ShareVector shares(double p00, double p11, double p22, double p02, double p12) {
  ShareVector s;
  s.pi_00 = p00;
  s.pi_11 = p11;
  s.pi_22 = p22;
  s.pi_02 = p02;
  s.pi_12 = p12;
  return s;
}

StepDistribution uniform_on(const std::vector<double>& y) {
  return StepDistribution::from_points(y, std::vector<double>(y.size(), 1.0));
}

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Io;
}

// Sample with a chosen (z, d) cell layout and continuous outcomes.
Sample simulated(std::uint64_t seed, std::size_t n, std::array<double, 5> probs) {
  DgpConfig c;
  c.strata_probs = probs;
  c.outcome_means = {{{0, 0.1, 0.5}, {0.2, 0.4, 0.9}, {0.3, 0.5, 1.2}, {0.1, 0.3, 1.4}, {0.2, 0.6, 1.0}}};
  c.cluster_count = n;
  c.cluster_size = 1;
  c.seed = seed;
  return generate(c).sample;
}

}  // namespace

TEST_CASE("no always takers: mixture is the treated program ecdf") {
  const auto treated = uniform_on({1, 2, 2, 5});
  const auto control = uniform_on({3});
  const MixtureCdf m = build_mixture_cdf(treated, control, shares(0.2, 0.2, 0.0, 0.4, 0.2));
  CHECK(m.coef_control == 0.0);
  CHECK(m.coef_treated == 1.0);
  REQUIRE(m.support == std::vector<double>{1, 2, 3, 5});
  const std::vector<double> expect{0.25, 0.75, 0.75, 1.0};
  for (std::size_t k = 0; k < expect.size(); ++k) CHECK(m.iso_cdf[k] == doctest::Approx(expect[k]));

  // Same from a sample with no control program takers.
  const Sample s = from_counts({4, 2, 0}, {1, 1, 4}, [](int z, int d, int k) {
    return z == 1 && d == 2 ? std::vector<double>{1, 2, 2, 5}[k] : 0.0;
  });
  const MixtureCdf ms = build_mixture_cdf(s, estimate_shares(s));
  REQUIRE(ms.support == std::vector<double>{1, 2, 5});
  CHECK(ms.iso_cdf[1] == doctest::Approx(0.75));
}

TEST_CASE("mixture cdf value by hand") {
  // pi22 / (pi02 + pi12) = 1/3, so the coefficients are 4/3 and 1/3.
  const MixtureCdf m =
      build_mixture_cdf(uniform_on({1, 2, 3, 4}), uniform_on({4}), shares(0.3, 0.3, 0.1, 0.2, 0.1));
  CHECK(m.coef_treated == doctest::Approx(4.0 / 3.0));
  CHECK(m.coef_control == doctest::Approx(1.0 / 3.0));
  // F~(3.5) = F~(3): (4/3)(0.75) - (1/3)(0).
  CHECK(m.raw_cdf[2] == doctest::Approx(1.0));
  CHECK(m.raw_cdf[3] == doctest::Approx(1.0));
}

TEST_CASE("isotonization is a running max on a dipping mixture") {
  // Treated uniform on 1..5, control all at 2, coefficients 3/2 and 1/2.
  const MixtureCdf m = build_mixture_cdf(uniform_on({1, 2, 3, 4, 5}), uniform_on({2}),
                                         shares(0.2, 0.2, 0.2, 0.2, 0.2));
  const std::vector<double> raw{0.3, 0.1, 0.4, 0.7, 1.0};
  const std::vector<double> iso{0.3, 0.3, 0.4, 0.7, 1.0};
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(m.raw_cdf[k] == doctest::Approx(raw[k]));
    CHECK(m.iso_cdf[k] == doctest::Approx(iso[k]));
  }
  CHECK(m.max_monotonicity_gap() == doctest::Approx(0.2));
  const auto mass = m.masses();
  CHECK(mass[1] == 0.0);
}

TEST_CASE("iso cdf invariants on random samples") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const Sample s = simulated(seed, 300, {0.2, 0.2, 0.25, 0.2, 0.15});
    const MixtureCdf m = build_mixture_cdf(s, estimate_shares(s));
    CHECK(m.iso_cdf.back() == 1.0);
    for (std::size_t k = 0; k < m.iso_cdf.size(); ++k) {
      CHECK(m.iso_cdf[k] >= 0.0);
      CHECK(m.iso_cdf[k] <= 1.0);
      if (k > 0) CHECK(m.iso_cdf[k] >= m.iso_cdf[k - 1]);
    }
  }
}

TEST_CASE("cutpoint examples") {
  const auto four = uniform_on({1, 2, 3, 4});
  const auto none = uniform_on({1});
  {
    const ShareVector s = shares(0.3, 0.3, 0.0, 0.4, 0.0);
    const TrimCutpoints c = trim_cutpoints(build_mixture_cdf(four, none, s), s);
    CHECK(c.c1 == 4.0);
    CHECK(c.c2 == 1.0);
  }
  {
    const ShareVector s = shares(0.3, 0.3, 0.0, 0.2, 0.2);
    const TrimCutpoints c = trim_cutpoints(build_mixture_cdf(four, none, s), s);
    CHECK(c.c1 == 2.0);
    CHECK(c.c2 == 2.0);
    CHECK(c.c1 == c.c2);
  }
  {
    // Complier fraction 0.75: c1 at the 0.75 quantile, c2 at the 0.25 quantile.
    const ShareVector s = shares(0.2, 0.2, 0.0, 0.45, 0.15);
    const TrimCutpoints c = trim_cutpoints(build_mixture_cdf(four, none, s), s);
    CHECK(c.c1 == 3.0);
    CHECK(c.c2 == 1.0);
  }
}

TEST_CASE("outcome bounds on the four point mixture") {
  // pi02 = pi12 = 0.5, pi22 = 0; treated program outcomes 0..3.
  const Sample s = from_counts({2, 2, 0}, {0, 0, 4}, [](int z, int d, int k) {
    return z == 1 && d == 2 ? static_cast<double>(k) : 0.5;
  });
  const StrataShares sh = estimate_shares(s);
  CHECK(sh.pi_02 == doctest::Approx(0.5));
  CHECK(sh.pi_12 == doctest::Approx(0.5));
  const EffectBounds b = complier_outcome_bounds(s, sh);
  CHECK(b.lower == doctest::Approx(0.5));
  CHECK(b.upper == doctest::Approx(2.5));
  CHECK(b.target == BoundTarget::complier_outcome_mean);

  // mu0 = mean(Y | Z=0, D=0) = 0.5 since there are no never takers.
  const BoundsAnalysis a = analyze_bounds(s);
  CHECK(a.mu0 == doctest::Approx(0.5));
  CHECK(a.complier_effect.lower == doctest::Approx(0.0));
  CHECK(a.complier_effect.upper == doctest::Approx(2.0));
}

TEST_CASE("no substitutors: point identification") {
  const Sample s = from_counts({3, 2, 1}, {0, 2, 4}, [](int z, int d, int k) {
    return z == 1 && d == 2 ? 1.0 + 2.0 * k : (d == 2 ? 5.0 : 0.0);
  });
  const StrataShares sh = estimate_shares(s);
  CHECK(sh.pi_12 == 0.0);
  const EffectBounds b = complier_outcome_bounds(s, sh);
  const MixtureCdf m = build_mixture_cdf(s, sh);
  CHECK(b.lower == b.upper);
  CHECK(b.lower == doctest::Approx(m.mean()));
  CHECK(b.width() == 0.0);

  const BoundsAnalysis a = analyze_bounds(s);
  const auto line = bounds_line(a.late, a.shares_used,
                                {a.complier_effect.lower, a.complier_effect.upper});
  CHECK(line.size() == 1);
}

TEST_CASE("effect bounds subtract mu0") {
  // mu0 = 0: effect bounds equal outcome bounds.
  const Sample s = from_counts({2, 2, 0}, {0, 0, 4}, [](int z, int d, int k) {
    return z == 1 && d == 2 ? static_cast<double>(k) : 0.0;
  });
  const BoundsAnalysis a = analyze_bounds(s);
  CHECK(a.mu0 == 0.0);
  CHECK(a.complier_effect.lower == a.complier_outcome.lower);
  CHECK(a.complier_effect.upper == a.complier_outcome.upper);
  CHECK(complier_effect_bounds(s).lower == a.complier_effect.lower);
}

TEST_CASE("decomposition example and line") {
  const ShareVector s = shares(0.2, 0.2, 0.0, 0.4, 0.2);
  const auto [lo, hi] = substitutor_from_complier(1.0, s, {0.8, 1.2});
  CHECK(lo == doctest::Approx(0.6));
  CHECK(hi == doctest::Approx(1.4));

  const auto line = bounds_line(1.0, s, {0.8, 1.2}, 11);
  REQUIRE(line.size() == 11);
  CHECK(line.front().substitutor_effect == doctest::Approx(1.4));
  CHECK(line.front().complier_effect == 0.8);
  CHECK(line.back().substitutor_effect == doctest::Approx(0.6));
  CHECK(line.back().complier_effect == 1.2);
  const LinePoint mid = line[5];
  CHECK(std::abs(0.4 * mid.complier_effect + 0.2 * mid.substitutor_effect - 0.6 * 1.0) <= 1e-12);
}

TEST_CASE("no compliers: substitutor bounds collapse to the late") {
  const Sample s = from_counts({2, 6, 2}, {2, 3, 5}, [](int z, int d, int k) {
    return z == 1 ? 1.0 + d + 0.1 * k : 0.5 * d;
  });
  const BoundsAnalysis a = analyze_bounds(s);
  CHECK(a.shares_used.pi_02 == 0.0);
  CHECK(a.substitutor_effect.lower == a.late);
  CHECK(a.substitutor_effect.upper == a.late);
  CHECK(std::isnan(a.complier_effect.lower));
}

TEST_CASE("weak shares") {
  // Only substitutors move: pi02 = 0 so complier outcome bounds are not defined.
  const Sample s = from_counts({2, 6, 2}, {2, 3, 5}, [](int, int, int k) { return 1.0 * k; });
  CHECK(kind_of([&] { complier_outcome_bounds(s, estimate_shares(s)); }) == ErrorKind::WeakShare);
  // Only compliers move: the substitutor effect is reported as not bounded.
  const Sample t = from_counts({5, 3, 2}, {1, 3, 6}, [](int, int, int k) { return 1.0 * k; });
  const EffectBounds sub = substitutor_effect_bounds(t);
  CHECK(std::isnan(sub.lower));
  CHECK(!sub.diagnostics.empty());
}

TEST_CASE("decomposition identity on random samples") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const Sample s = simulated(seed, 400, {0.2, 0.2, 0.2, 0.2, 0.2});
    const BoundsAnalysis a = analyze_bounds(s);
    const ShareVector& u = a.shares_used;
    const auto line = bounds_line(s, 21);
    REQUIRE(line.size() == 21);
    for (const auto& p : line) {
      CHECK(std::abs(u.pi_02 * p.complier_effect + u.pi_12 * p.substitutor_effect -
                     a.late * (u.pi_02 + u.pi_12)) <= 1e-10);
    }
    CHECK(line.front().complier_effect == a.complier_effect.lower);
    CHECK(line.back().complier_effect == a.complier_effect.upper);
    CHECK(line.front().substitutor_effect == doctest::Approx(a.substitutor_effect.upper).epsilon(1e-14));
    CHECK(line.back().substitutor_effect == doctest::Approx(a.substitutor_effect.lower).epsilon(1e-14));
    CHECK(a.complier_effect.lower <= a.complier_effect.upper);
    CHECK(a.substitutor_effect.lower <= a.substitutor_effect.upper);
  }
}

TEST_CASE("width grows with the substitutor fraction") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  std::vector<double> y(40);
  for (double& v : y) v = n01(rng);
  const auto treated = uniform_on(y);
  const auto control = uniform_on({0.0});
  double last = -1.0;
  for (double f = 0.0; f <= 0.9; f += 0.05) {
    const ShareVector s = shares(0.1, 0.1, 0.0, 0.8 * (1.0 - f), 0.8 * f);
    const MixtureCdf m = build_mixture_cdf(treated, control, s);
    const TrimCutpoints c = trim_cutpoints(m, s);
    const auto mass = m.masses();
    const double frac = 1.0 - f;
    const double width = upper_tail(m.support, mass, frac).mean - lower_tail(m.support, mass, frac).mean;
    CHECK(width >= last - 1e-12);
    if (frac >= 0.5) CHECK(c.c1 >= c.c2 - 1e-12);
    last = width;
  }
}

TEST_CASE("location scale equivariance") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Sample s = simulated(seed, 500, {0.15, 0.2, 0.2, 0.25, 0.2});
    std::vector<UnitRecord> units = s.units();
    const double a = 3.0, b = -7.25;
    for (auto& u : units) u.y = a * u.y + b;
    const Sample t("affine", units);
    const BoundsAnalysis x = analyze_bounds(s), y = analyze_bounds(t);
    CHECK(y.complier_effect.lower == doctest::Approx(a * x.complier_effect.lower).epsilon(1e-10));
    CHECK(y.complier_effect.upper == doctest::Approx(a * x.complier_effect.upper).epsilon(1e-10));
    CHECK(y.substitutor_effect.lower == doctest::Approx(a * x.substitutor_effect.lower).epsilon(1e-10));
    CHECK(y.substitutor_effect.upper == doctest::Approx(a * x.substitutor_effect.upper).epsilon(1e-10));
    CHECK(y.complier_outcome.lower == doctest::Approx(a * x.complier_outcome.lower + b).epsilon(1e-10));
  }
}

TEST_CASE("trim keeps exactly the complier fraction of mixture mass") {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    // Rounded outcomes create ties at the cutpoints.
    std::vector<UnitRecord> units = simulated(seed, 300, {0.2, 0.2, 0.2, 0.2, 0.2}).units();
    for (auto& u : units) u.y = std::round(u.y * 2.0) / 2.0;
    const Sample s("ties", units);
    const StrataShares sh = estimate_shares(s);
    const ShareVector used = shares_for_use(sh, {});
    const MixtureCdf m = build_mixture_cdf(s, used);
    const auto mass = m.masses();
    const double p = used.pi_02 / (used.pi_02 + used.pi_12);
    const TailTrim lo = lower_tail(m.support, mass, p);
    const TailTrim hi = upper_tail(m.support, mass, p);
    CHECK(std::abs(lo.retained_mass - p) <= 1e-10);
    CHECK(std::abs(hi.retained_mass - p) <= 1e-10);
    const TrimCutpoints c = trim_cutpoints(m, used);
    // Mass strictly below c1 plus the retained tie mass equals p.
    double below = 0.0;
    for (std::size_t k = 0; k < m.support.size() && m.support[k] < c.c1; ++k) below += mass[k];
    CHECK(std::abs(below + c.c1_tie_mass - p) <= 1e-10);
    const EffectBounds b = complier_outcome_bounds(s, sh);
    CHECK(b.lower == doctest::Approx(lo.mean).epsilon(1e-14));
    CHECK(b.upper == doctest::Approx(hi.mean).epsilon(1e-14));
  }
}

TEST_CASE("trimming bounds equal brute force extremes") {
  std::mt19937_64 rng = substream(99, 0);
  int checked = 0;
  for (int k = 0; k < 150; ++k) {
    SmallInstanceSpec spec;
    spec.integer_levels = k % 3 == 0 ? 4 : 0;
    const SyntheticPopulation pop = small_instance(rng, spec);
    const StrataShares sh = estimate_shares(pop.sample);
    if (!(sh.pi_02 > 0.0)) continue;
    const auto [lo, hi] = brute_force_sharpness(pop);
    const EffectBounds b = complier_outcome_bounds(pop.sample, sh);
    CHECK(std::abs(b.lower - lo) <= 1e-9);
    CHECK(std::abs(b.upper - hi) <= 1e-9);
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("direct and intersected substitutor bounds") {
  const Sample s = simulated(5, 20000, {0.2, 0.2, 0.15, 0.25, 0.2});
  BoundsOptions opts;
  const BoundsAnalysis a = analyze_bounds(s, opts);
  const EffectBounds direct = substitutor_effect_bounds(s, SubstitutorMethod::direct);
  CHECK(direct.lower <= direct.upper);
  CHECK(direct.target == BoundTarget::substitutor_effect);
  opts.intersect = true;
  const BoundsAnalysis both = analyze_bounds(s, opts);
  REQUIRE(both.substitutor_direct.has_value());
  CHECK(both.substitutor_effect.lower >= a.substitutor_effect.lower - 1e-12);
  CHECK(both.substitutor_effect.upper <= a.substitutor_effect.upper + 1e-12);
  CHECK(both.substitutor_effect.lower >= direct.lower - 1e-12);
  CHECK(both.substitutor_effect.upper <= direct.upper + 1e-12);
}

TEST_CASE("smoothed mixture stays close to the step mixture") {
  const Sample s = simulated(8, 20000, {0.2, 0.2, 0.15, 0.25, 0.2});
  BoundsOptions smooth;
  smooth.smoothing = Smoothing::gaussian_kernel;
  const BoundsAnalysis a = analyze_bounds(s), b = analyze_bounds(s, smooth);
  CHECK(std::abs(a.complier_effect.lower - b.complier_effect.lower) < 0.1);
  CHECK(std::abs(a.complier_effect.upper - b.complier_effect.upper) < 0.1);
  CHECK(b.mixture.support.size() == smooth.smoothing_grid);
}

TEST_CASE("simulated truth lies inside estimated bounds at large n") {
  int inside = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    DgpConfig c;
    c.strata_probs = {0.2, 0.2, 0.15, 0.25, 0.2};
    c.outcome_means = {{{0, 0.1, 0.5}, {0.2, 0.4, 0.9}, {0.3, 0.5, 1.2}, {0.1, 0.3, 1.4}, {0.2, 0.6, 1.0}}};
    c.cluster_count = 20000;
    c.cluster_size = 1;
    c.seed = seed;
    const SyntheticPopulation pop = generate(c);
    const BoundsAnalysis a = analyze_bounds(pop.sample);
    inside += a.complier_effect.lower <= pop.finite.tau_02 && pop.finite.tau_02 <= a.complier_effect.upper &&
              a.substitutor_effect.lower <= pop.finite.tau_12 && pop.finite.tau_12 <= a.substitutor_effect.upper;
  }
  CHECK(inside >= 19);
}

TEST_CASE("raw share bounds are reported when clamping changes shares") {
  // Control alternative take-up slightly above treated: raw pi12 < 0.
  std::vector<UnitRecord> units = simulated(3, 4000, {0.25, 0.3, 0.15, 0.3, 0.0}).units();
  const Sample s("clamped", units);
  const BoundsAnalysis a = analyze_bounds(s);
  if (a.shares.clamped) {
    CHECK(a.shares_used.pi_12 == 0.0);
    CHECK(a.complier_effect.lower == a.complier_effect.upper);
  } else {
    CHECK(a.shares.raw.pi_12 >= 0.0);
  }
}

TEST_CASE("json output") {
  const Sample s = simulated(2, 500, {0.2, 0.2, 0.2, 0.2, 0.2});
  const BoundsAnalysis a = analyze_bounds(s);
  const auto j = to_json(a.complier_effect);
  CHECK(j["target"] == "complier_effect");
  CHECK(j.contains("cutpoints"));
  const auto m = to_json(a.mixture);
  CHECK(m["support"].size() == a.mixture.support.size());
}
