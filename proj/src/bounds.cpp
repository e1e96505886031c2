#include "strata/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

namespace strata {

std::vector<double> MixtureCdf::masses() const {
  std::vector<double> m(iso_cdf.size());
  double prev = 0.0;
  for (std::size_t k = 0; k < iso_cdf.size(); ++k) {
    m[k] = iso_cdf[k] - prev;
    prev = iso_cdf[k];
  }
  return m;
}

double MixtureCdf::mean() const {
  const auto m = masses();
  double s = 0.0;
  for (std::size_t k = 0; k < m.size(); ++k) s += m[k] * support[k];
  return s;
}

double MixtureCdf::max_monotonicity_gap() const {
  double run = -std::numeric_limits<double>::infinity();
  double gap = 0.0;
  for (double v : raw_cdf) {
    run = std::max(run, v);
    gap = std::max(gap, run - v);
  }
  return gap;
}

StepDistribution cell_distribution(const Sample& sample, int z, int d) {
  std::vector<double> ys, ws;
  const auto zs = sample.z();
  const auto ds = sample.d();
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (zs[i] == z && ds[i] == d) {
      ys.push_back(sample.y()[i]);
      ws.push_back(sample.ipw_weight()[i]);
    }
  }
  if (ys.empty()) {
    throw Error(ErrorKind::EmptyCell, "no units with z=" + std::to_string(z) +
                                          ", d=" + std::to_string(d));
  }
  return StepDistribution::from_points(ys, ws);
}

namespace {

void check_mixture_shares(const ShareVector& s, double floor) {
  const double movers = s.pi_02 + s.pi_12;
  if (!(movers > floor)) {
    std::ostringstream msg;
    msg << "pi_02 + pi_12 = " << movers << " is not above the floor " << floor;
    throw Error(ErrorKind::WeakShare, msg.str());
  }
}

void isotonize(MixtureCdf& m) {
  m.iso_cdf.resize(m.raw_cdf.size());
  double run = 0.0;
  for (std::size_t k = 0; k < m.raw_cdf.size(); ++k) {
    run = std::max(run, m.raw_cdf[k]);
    m.iso_cdf[k] = std::clamp(run, 0.0, 1.0);
  }
  if (!m.iso_cdf.empty()) m.iso_cdf.back() = 1.0;
}

}  // namespace

MixtureCdf build_mixture_cdf(const StepDistribution& treated_program,
                             const StepDistribution& control_program,
                             const ShareVector& shares, double floor) {
  check_mixture_shares(shares, floor);
  if (treated_program.empty()) {
    throw Error(ErrorKind::EmptyCell, "no treated units take up the program");
  }
  if (control_program.empty() && shares.pi_22 > 0.0) {
    throw Error(ErrorKind::EmptyCell, "no control units take up the program");
  }
  MixtureCdf m;
  const double movers = shares.pi_02 + shares.pi_12;
  m.coef_treated = (movers + shares.pi_22) / movers;
  m.coef_control = shares.pi_22 / movers;

  std::merge(treated_program.support.begin(), treated_program.support.end(),
             control_program.support.begin(), control_program.support.end(),
             std::back_inserter(m.support));
  m.support.erase(std::unique(m.support.begin(), m.support.end()), m.support.end());

  m.raw_cdf.resize(m.support.size());
  std::size_t i = 0, j = 0;
  double ft = 0.0, fc = 0.0;
  for (std::size_t k = 0; k < m.support.size(); ++k) {
    const double y = m.support[k];
    while (i < treated_program.support.size() && treated_program.support[i] <= y) {
      ft += treated_program.mass[i++];
    }
    while (j < control_program.support.size() && control_program.support[j] <= y) {
      fc += control_program.mass[j++];
    }
    m.raw_cdf[k] = m.coef_treated * ft - m.coef_control * fc;
  }
  isotonize(m);
  return m;
}

MixtureCdf build_mixture_cdf(const Sample& sample, const ShareVector& shares,
                             const BoundsOptions& opts) {
  if (opts.smoothing == Smoothing::gaussian_kernel) {
    return build_smoothed_mixture_cdf(sample, shares, opts);
  }
  check_mixture_shares(shares, opts.estimator.share_floor);
  const auto treated = cell_distribution(sample, 1, kProgram);
  StepDistribution control;
  if (shares.pi_22 > 0.0) control = cell_distribution(sample, 0, kProgram);
  return build_mixture_cdf(treated, control, shares, opts.estimator.share_floor);
}

MixtureCdf build_smoothed_mixture_cdf(const Sample& sample, const ShareVector& shares,
                                      const BoundsOptions& opts) {
  check_mixture_shares(shares, opts.estimator.share_floor);
  struct Cell {
    std::vector<double> y, w;
    double h = 0.0;
    double total = 0.0;
  };
  Cell cells[2];
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (sample.d()[i] != kProgram) continue;
    Cell& c = cells[sample.z()[i] == 1 ? 0 : 1];
    c.y.push_back(sample.y()[i]);
    c.w.push_back(sample.ipw_weight()[i]);
    c.total += sample.ipw_weight()[i];
  }
  if (cells[0].y.empty()) {
    throw Error(ErrorKind::EmptyCell, "no treated units take up the program");
  }
  const bool use_control = shares.pi_22 > 0.0;
  if (use_control && cells[1].y.empty()) {
    throw Error(ErrorKind::EmptyCell, "no control units take up the program");
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  double h_max = 0.0;
  for (int c = 0; c < (use_control ? 2 : 1); ++c) {
    cells[c].h = silverman_bandwidth(cells[c].y, cells[c].w);
    if (!(cells[c].h > 0.0)) cells[c].h = 1e-6 * (1.0 + std::abs(cells[c].y.front()));
    h_max = std::max(h_max, cells[c].h);
    for (double v : cells[c].y) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  lo -= 4.0 * h_max;
  hi += 4.0 * h_max;

  MixtureCdf m;
  const double movers = shares.pi_02 + shares.pi_12;
  m.coef_treated = (movers + shares.pi_22) / movers;
  m.coef_control = shares.pi_22 / movers;
  const std::size_t n = std::max<std::size_t>(opts.smoothing_grid, 2);
  const boost::math::normal_distribution<double> phi;
  auto kernel_cdf = [&](const Cell& c, double y) {
    double s = 0.0;
    for (std::size_t i = 0; i < c.y.size(); ++i) {
      s += c.w[i] * boost::math::cdf(phi, (y - c.y[i]) / c.h);
    }
    return s / c.total;
  };
  m.support.resize(n);
  m.raw_cdf.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double y = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
    m.support[k] = y;
    m.raw_cdf[k] = m.coef_treated * kernel_cdf(cells[0], y) -
                   (use_control ? m.coef_control * kernel_cdf(cells[1], y) : 0.0);
  }
  isotonize(m);
  return m;
}

namespace {

double complier_fraction(const ShareVector& s) { return s.pi_02 / (s.pi_02 + s.pi_12); }

struct Trimmed {
  TailTrim lower;
  TailTrim upper;
  TrimCutpoints cut;
};

// Keeps `fraction` of the mixture mass from each tail.
Trimmed trim(const MixtureCdf& m, double fraction) {
  const auto mass = m.masses();
  Trimmed t;
  t.lower = lower_tail(m.support, mass, fraction);
  t.upper = upper_tail(m.support, mass, fraction);
  t.cut.lower_level = fraction;
  t.cut.upper_level = 1.0 - fraction;
  t.cut.c1 = t.lower.cutpoint;
  t.cut.c1_tie_mass = t.lower.boundary_mass;
  const std::size_t k2 = generalized_inverse_index(m.iso_cdf, 1.0 - fraction);
  t.cut.c2 = m.support[k2];
  // When F(c2) sits exactly at the level, the upper tail starts at the
  // next atom and nothing at c2 itself is retained.
  t.cut.c2_tie_mass = k2 == t.upper.cut_index ? t.upper.boundary_mass : 0.0;
  return t;
}

// Orders an endpoint pair, swapping tiny inversions and rejecting real ones.
void settle(EffectBounds& b, double tolerance) {
  if (b.lower <= b.upper) return;
  const double gap = b.lower - b.upper;
  if (gap < tolerance) {
    std::swap(b.lower, b.upper);
    std::ostringstream msg;
    msg << "swapped endpoints inverted by " << gap;
    b.diagnostics.push_back(msg.str());
    return;
  }
  std::ostringstream msg;
  msg << to_string(b.target) << " lower " << b.lower << " exceeds upper " << b.upper;
  throw Error(ErrorKind::BoundsInverted, msg.str());
}

void require_share(double value, double floor, const char* name) {
  if (!(value > floor)) {
    std::ostringstream msg;
    msg << name << " = " << value << " is not above the floor " << floor;
    throw Error(ErrorKind::WeakShare, msg.str());
  }
}

EffectBounds outcome_bounds_from_mixture(const MixtureCdf& m, const ShareVector& used,
                                         const BoundsOptions& opts) {
  require_share(used.pi_02, opts.estimator.share_floor, "pi_02");
  EffectBounds b;
  b.target = BoundTarget::complier_outcome_mean;
  b.shares_used = used;
  const double p = complier_fraction(used);
  if (used.pi_12 == 0.0) {
    b.lower = b.upper = m.mean();
    b.cutpoints.c1 = m.support.back();
    b.cutpoints.c2 = m.support.front();
    b.cutpoints.lower_level = 1.0;
    b.cutpoints.upper_level = 0.0;
    b.cutpoints.c1_tie_mass = m.masses().back();
    b.cutpoints.c2_tie_mass = m.masses().front();
  } else {
    const Trimmed t = trim(m, p);
    b.lower = t.lower.mean;
    b.upper = t.upper.mean;
    b.cutpoints = t.cut;
  }
  const double gap = m.max_monotonicity_gap();
  if (gap > 0.0) {
    std::ostringstream msg;
    msg << "mixture CDF isotonized; largest dip " << gap;
    b.diagnostics.push_back(msg.str());
  }
  settle(b, opts.inversion_tolerance);
  return b;
}

EffectBounds shift(EffectBounds b, BoundTarget target, double by, const BoundsOptions& opts) {
  b.target = target;
  b.lower -= by;
  b.upper -= by;
  settle(b, opts.inversion_tolerance);
  return b;
}

EffectBounds decomposition_bounds(double late, const EffectBounds& complier,
                                  const BoundsOptions& opts) {
  const ShareVector& s = complier.shares_used;
  require_share(s.pi_12, opts.estimator.share_floor, "pi_12");
  EffectBounds b = complier;
  b.target = BoundTarget::substitutor_effect;
  const auto [lo, hi] = substitutor_from_complier(late, s, {complier.lower, complier.upper});
  b.lower = lo;
  b.upper = hi;
  settle(b, opts.inversion_tolerance);
  return b;
}

EffectBounds direct_bounds(const MixtureCdf& m, const CellMeans& cells, const ShareVector& used,
                           const BoundsOptions& opts) {
  require_share(used.pi_12, opts.estimator.share_floor, "pi_12");
  EffectBounds b;
  b.target = BoundTarget::substitutor_effect;
  b.shares_used = used;
  const double mu1 = mu1_from_cells(cells, used, opts.estimator);
  if (used.pi_02 == 0.0) {
    b.lower = b.upper = m.mean();
    b.cutpoints.c1 = m.support.back();
    b.cutpoints.c2 = m.support.front();
    b.cutpoints.lower_level = 1.0;
    b.cutpoints.upper_level = 0.0;
  } else {
    const Trimmed t = trim(m, 1.0 - complier_fraction(used));
    b.lower = t.lower.mean;
    b.upper = t.upper.mean;
    b.cutpoints = t.cut;
  }
  b.lower -= mu1;
  b.upper -= mu1;
  settle(b, opts.inversion_tolerance);
  return b;
}

EffectBounds intersect(EffectBounds a, const EffectBounds& b, const BoundsOptions& opts) {
  a.lower = std::max(a.lower, b.lower);
  a.upper = std::min(a.upper, b.upper);
  a.diagnostics.push_back("intersection of decomposition and direct substitutor bounds");
  settle(a, opts.inversion_tolerance);
  return a;
}

EffectBounds point_bounds(BoundTarget target, double value, const ShareVector& used) {
  EffectBounds b;
  b.target = target;
  b.lower = b.upper = value;
  b.shares_used = used;
  return b;
}

}  // namespace

TrimCutpoints trim_cutpoints(const MixtureCdf& mixture, const ShareVector& shares) {
  check_mixture_shares(shares, 0.0);
  const double p = complier_fraction(shares);
  if (shares.pi_12 == 0.0) {
    TrimCutpoints c;
    c.c1 = mixture.support.back();
    c.c2 = mixture.support.front();
    c.c1_tie_mass = mixture.masses().back();
    c.c2_tie_mass = mixture.masses().front();
    return c;
  }
  if (shares.pi_02 == 0.0) {
    TrimCutpoints c;
    c.lower_level = 0.0;
    c.upper_level = 1.0;
    c.c1 = mixture.support.front();
    c.c2 = mixture.support[generalized_inverse_index(mixture.iso_cdf, 1.0)];
    return c;
  }
  return trim(mixture, p).cut;
}

std::string_view to_string(BoundTarget target) {
  switch (target) {
    case BoundTarget::complier_outcome_mean: return "complier_outcome_mean";
    case BoundTarget::complier_effect: return "complier_effect";
    case BoundTarget::substitutor_effect: return "substitutor_effect";
  }
  return "unknown";
}

std::pair<double, double> substitutor_from_complier(double late, const ShareVector& s,
                                                    std::pair<double, double> complier) {
  return {substitutor_effect_at(late, s, complier.second),
          substitutor_effect_at(late, s, complier.first)};
}

double substitutor_effect_at(double late, const ShareVector& s, double complier_effect) {
  return (late * (s.pi_02 + s.pi_12) - s.pi_02 * complier_effect) / s.pi_12;
}

EffectBounds complier_outcome_bounds(const Sample& sample, const StrataShares& shares,
                                     const BoundsOptions& opts) {
  const ShareVector used = shares_for_use(shares, opts.estimator);
  require_share(used.pi_02, opts.estimator.share_floor, "pi_02");
  const MixtureCdf m = build_mixture_cdf(sample, used, opts);
  EffectBounds b = outcome_bounds_from_mixture(m, used, opts);
  b.diagnostics.insert(b.diagnostics.begin(), shares.diagnostics.begin(),
                       shares.diagnostics.end());
  return b;
}

EffectBounds complier_effect_bounds(const Sample& sample, const BoundsOptions& opts) {
  return analyze_bounds(sample, opts).complier_effect;
}

EffectBounds substitutor_effect_bounds(const Sample& sample, SubstitutorMethod method,
                                       const BoundsOptions& opts) {
  BoundsOptions o = opts;
  o.substitutor_method = method;
  return analyze_bounds(sample, o).substitutor_effect;
}

std::vector<LinePoint> bounds_line(double late, const ShareVector& s,
                                   std::pair<double, double> complier, std::size_t grid) {
  std::vector<LinePoint> line;
  if (complier.first == complier.second || grid < 2) {
    const double sub = s.pi_12 > 0.0 ? substitutor_effect_at(late, s, complier.first)
                                     : std::numeric_limits<double>::quiet_NaN();
    line.push_back({sub, complier.first});
    return line;
  }
  line.reserve(grid);
  for (std::size_t k = 0; k < grid; ++k) {
    double t;
    if (k == 0) {
      t = complier.first;
    } else if (k + 1 == grid) {
      t = complier.second;
    } else {
      const double f = static_cast<double>(k) / static_cast<double>(grid - 1);
      t = complier.first + f * (complier.second - complier.first);
    }
    line.push_back({substitutor_effect_at(late, s, t), t});
  }
  return line;
}

std::vector<LinePoint> bounds_line(const Sample& sample, std::size_t grid,
                                   const BoundsOptions& opts) {
  const BoundsAnalysis a = analyze_bounds(sample, opts);
  if (!(a.shares_used.pi_12 > opts.estimator.share_floor)) {
    const double t = a.complier_effect.lower;
    return {{std::numeric_limits<double>::quiet_NaN(), t}};
  }
  return bounds_line(a.late, a.shares_used, {a.complier_effect.lower, a.complier_effect.upper},
                     grid);
}

BoundsAnalysis analyze_bounds(const Sample& sample, const BoundsOptions& opts) {
  BoundsAnalysis a;
  a.cells = cell_means(sample);
  a.shares = shares_from_cells(a.cells, opts.estimator);
  a.shares_used = shares_for_use(a.shares, opts.estimator);
  a.itt = itt_from_cells(a.cells);
  a.control_mean = a.cells.arm_mean(0);
  a.first_stage = first_stage_from_cells(a.cells);
  a.late = late_from_cells(a.cells, opts.estimator);
  const ShareVector& used = a.shares_used;
  const double floor = opts.estimator.share_floor;

  // No compliers: the LATE is the substitutor effect and the complier
  // quantities are not identified.
  if (used.pi_02 == 0.0) {
    a.mixture = build_mixture_cdf(sample, used, opts);
    a.complier_outcome = point_bounds(BoundTarget::complier_outcome_mean,
                                      std::numeric_limits<double>::quiet_NaN(), used);
    a.complier_effect = point_bounds(BoundTarget::complier_effect,
                                     std::numeric_limits<double>::quiet_NaN(), used);
    a.complier_effect.diagnostics.push_back("pi_02 = 0: complier effect not identified");
    a.mu0 = std::numeric_limits<double>::quiet_NaN();
    if (used.pi_12 > floor) a.mu1 = mu1_from_cells(a.cells, used, opts.estimator);
    a.substitutor_effect = point_bounds(BoundTarget::substitutor_effect, a.late, used);
    a.substitutor_effect.diagnostics = a.shares.diagnostics;
    return a;
  }

  a.mixture = build_mixture_cdf(sample, used, opts);
  a.complier_outcome = outcome_bounds_from_mixture(a.mixture, used, opts);
  a.complier_outcome.diagnostics.insert(a.complier_outcome.diagnostics.begin(),
                                        a.shares.diagnostics.begin(),
                                        a.shares.diagnostics.end());
  a.mu0 = mu0_from_cells(a.cells, used, opts.estimator);
  a.complier_effect = shift(a.complier_outcome, BoundTarget::complier_effect, a.mu0, opts);

  if (used.pi_12 > floor) {
    a.mu1 = mu1_from_cells(a.cells, used, opts.estimator);
    EffectBounds decomposition = decomposition_bounds(a.late, a.complier_effect, opts);
    if (opts.intersect || opts.substitutor_method == SubstitutorMethod::direct) {
      a.substitutor_direct = direct_bounds(a.mixture, a.cells, used, opts);
      a.substitutor_direct->diagnostics.insert(a.substitutor_direct->diagnostics.begin(),
                                               a.shares.diagnostics.begin(),
                                               a.shares.diagnostics.end());
    }
    if (opts.intersect) {
      a.substitutor_effect = intersect(decomposition, *a.substitutor_direct, opts);
    } else if (opts.substitutor_method == SubstitutorMethod::direct) {
      a.substitutor_effect = *a.substitutor_direct;
    } else {
      a.substitutor_effect = decomposition;
    }
  } else {
    a.substitutor_effect = point_bounds(BoundTarget::substitutor_effect,
                                        std::numeric_limits<double>::quiet_NaN(), used);
    std::ostringstream msg;
    msg << "pi_12 = " << used.pi_12 << " is not above the floor " << floor
        << ": substitutor effect not bounded";
    a.substitutor_effect.diagnostics.push_back(msg.str());
  }

  if (a.shares.clamped && opts.estimator.use_clamped_shares) {
    try {
      BoundsOptions raw = opts;
      raw.estimator.use_clamped_shares = false;
      const ShareVector& r = a.shares.raw;
      if (r.pi_02 > floor && r.pi_12 >= 0.0) {
        const MixtureCdf mr = build_mixture_cdf(sample, r, raw);
        const EffectBounds o = outcome_bounds_from_mixture(mr, r, raw);
        const double mu0 = mu0_from_cells(a.cells, r, raw.estimator);
        a.complier_effect_raw_shares = std::pair{o.lower - mu0, o.upper - mu0};
      }
    } catch (const Error&) {
      // Raw shares do not admit bounds; only the clamped version is reported.
    }
  }
  return a;
}

nlohmann::json to_json(const EffectBounds& b) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  nlohmann::json j;
  j["target"] = to_string(b.target);
  j["lower"] = num(b.lower);
  j["upper"] = num(b.upper);
  j["ci_lower"] = b.ci_lower ? nlohmann::json{b.ci_lower->first, b.ci_lower->second}
                             : nlohmann::json(nullptr);
  j["ci_upper"] = b.ci_upper ? nlohmann::json{b.ci_upper->first, b.ci_upper->second}
                             : nlohmann::json(nullptr);
  j["cutpoints"] = {{"c1", num(b.cutpoints.c1)},
                    {"c2", num(b.cutpoints.c2)},
                    {"lower_level", b.cutpoints.lower_level},
                    {"upper_level", b.cutpoints.upper_level},
                    {"c1_tie_mass", b.cutpoints.c1_tie_mass},
                    {"c2_tie_mass", b.cutpoints.c2_tie_mass}};
  const ShareVector& s = b.shares_used;
  j["shares_used"] = {{"pi_00", s.pi_00}, {"pi_11", s.pi_11}, {"pi_22", s.pi_22},
                      {"pi_02", s.pi_02}, {"pi_12", s.pi_12}};
  j["diagnostics"] = b.diagnostics;
  return j;
}

nlohmann::json to_json(const MixtureCdf& m) {
  return {{"support", m.support},
          {"raw_cdf", m.raw_cdf},
          {"iso_cdf", m.iso_cdf},
          {"coefficients", {m.coef_treated, m.coef_control}}};
}

}  // namespace strata
