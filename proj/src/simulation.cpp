#include "strata/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "strata/error.hpp"
#include "strata/rng.hpp"
#include "strata/step_distribution.hpp"

namespace strata {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const char* kStratumNames[] = {"never_taker", "adherent", "always_taker", "complier",
                               "substitutor"};

// {D(0), D(1)} per stratum.
constexpr int kTakeUp[kStrataCount][2] = {{0, 0}, {1, 1}, {2, 2}, {0, 2}, {1, 2}};

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorKind::InvalidConfig, what);
}

std::size_t idx(Stratum s) { return static_cast<std::size_t>(s); }

}  // namespace

std::string_view to_string(Stratum s) { return kStratumNames[idx(s)]; }

int take_up(Stratum s, int z) { return kTakeUp[idx(s)][z]; }

std::string_view to_string(OutcomeFamily f) {
  switch (f) {
    case OutcomeFamily::normal: return "normal";
    case OutcomeFamily::uniform: return "uniform";
    case OutcomeFamily::two_point: return "two_point";
  }
  return "normal";
}

OutcomeFamily parse_family(std::string_view name) {
  if (name == "normal") return OutcomeFamily::normal;
  if (name == "uniform") return OutcomeFamily::uniform;
  if (name == "two_point") return OutcomeFamily::two_point;
  invalid("unknown outcome family '" + std::string(name) + "'");
}

void DgpConfig::validate() const {
  double total = 0.0;
  for (double p : strata_probs) {
    if (!(p >= 0.0) || p > 1.0) invalid("strata_probs must lie in [0, 1]");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    std::ostringstream msg;
    msg << "strata_probs sum to " << total << ", not 1";
    invalid(msg.str());
  }
  for (const auto& row : outcome_means) {
    for (double m : row) {
      if (!std::isfinite(m)) invalid("outcome_means must be finite");
    }
  }
  if (!(outcome_noise >= 0.0) || !std::isfinite(outcome_noise)) {
    invalid("outcome_noise must be a finite nonnegative value");
  }
  if (cluster_count == 0 || cluster_size == 0) {
    invalid("cluster_count and cluster_size must be positive");
  }
  if (!(icc >= 0.0 && icc < 1.0)) invalid("icc must lie in [0, 1)");
  if (blocks == 0) invalid("blocks must be positive");
  if (cluster_count < 2 * blocks) invalid("every block needs at least two clusters");
  if (!block_assign_prob.empty() && block_assign_prob.size() != blocks) {
    invalid("block_assign_prob needs one entry per block");
  }
  auto check_prob = [](double p) {
    if (!(p > 0.0 && p < 1.0)) invalid("assignment probabilities must lie in (0, 1)");
  };
  if (block_assign_prob.empty()) {
    check_prob(assign_prob);
  } else {
    for (double p : block_assign_prob) check_prob(p);
  }
  if (!(distance_median >= 0.0)) invalid("distance_median must be nonnegative");
}

nlohmann::json to_json(const DgpConfig& c) {
  nlohmann::json means = nlohmann::json::object();
  for (std::size_t s = 0; s < kStrataCount; ++s) {
    means[kStratumNames[s]] = c.outcome_means[s];
  }
  nlohmann::json probs = nlohmann::json::object();
  for (std::size_t s = 0; s < kStrataCount; ++s) probs[kStratumNames[s]] = c.strata_probs[s];
  return {{"strata_probs", probs},
          {"outcome_means", means},
          {"outcome_noise", c.outcome_noise},
          {"family", to_string(c.family)},
          {"cluster_count", c.cluster_count},
          {"cluster_size", c.cluster_size},
          {"icc", c.icc},
          {"assign_prob", c.assign_prob},
          {"blocks", c.blocks},
          {"block_assign_prob", c.block_assign_prob},
          {"distance_median", c.distance_median},
          {"seed", c.seed}};
}

DgpConfig dgp_from_json(const nlohmann::json& j) {
  DgpConfig c;
  try {
    if (j.contains("strata_probs")) {
      const auto& p = j.at("strata_probs");
      for (std::size_t s = 0; s < kStrataCount; ++s) {
        c.strata_probs[s] = p.is_array() ? p.at(s).get<double>()
                                         : p.value(kStratumNames[s], 0.0);
      }
    }
    if (j.contains("outcome_means")) {
      const auto& m = j.at("outcome_means");
      for (std::size_t s = 0; s < kStrataCount; ++s) {
        const auto& row = m.is_array() ? m.at(s) : m.at(kStratumNames[s]);
        for (std::size_t d = 0; d < 3; ++d) c.outcome_means[s][d] = row.at(d).get<double>();
      }
    }
    c.outcome_noise = j.value("outcome_noise", c.outcome_noise);
    c.family = parse_family(j.value("family", std::string(to_string(c.family))));
    c.cluster_count = j.value("cluster_count", c.cluster_count);
    c.cluster_size = j.value("cluster_size", c.cluster_size);
    c.icc = j.value("icc", c.icc);
    c.assign_prob = j.value("assign_prob", c.assign_prob);
    c.blocks = j.value("blocks", c.blocks);
    c.block_assign_prob = j.value("block_assign_prob", c.block_assign_prob);
    c.distance_median = j.value("distance_median", c.distance_median);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    invalid(std::string("bad simulation config: ") + e.what());
  }
  c.validate();
  return c;
}

DgpConfig preset(std::string_view name) {
  DgpConfig c;
  double late = 0.0;
  double tau02 = 0.0;
  if (name == "table7-t1") {
    c.strata_probs = {0.23, 0.09, 0.00, 0.42, 0.25};
    late = 1.06;
    tau02 = 1.2;
  } else if (name == "table7-t2") {
    c.strata_probs = {0.20, 0.25, 0.18, 0.16, 0.20};
    late = 1.04;
    tau02 = 1.5;
  } else {
    invalid("unknown preset '" + std::string(name) + "'");
  }
  // The published vectors sum to 0.99.
  const double total = std::accumulate(c.strata_probs.begin(), c.strata_probs.end(), 0.0);
  for (double& p : c.strata_probs) p /= total;
  const double p02 = c.strata_probs[idx(Stratum::complier)];
  const double p12 = c.strata_probs[idx(Stratum::substitutor)];
  const double tau12 = (late * (p02 + p12) - p02 * tau02) / p12;

  c.outcome_means[idx(Stratum::never_taker)] = {0.0, 0.2, 0.9};
  c.outcome_means[idx(Stratum::adherent)] = {0.2, 0.4, 1.1};
  c.outcome_means[idx(Stratum::always_taker)] = {0.3, 0.6, 1.3};
  c.outcome_means[idx(Stratum::complier)] = {0.0, 0.2, tau02};
  c.outcome_means[idx(Stratum::substitutor)] = {0.1, 0.4, 0.4 + tau12};
  c.outcome_noise = 1.0;
  c.family = OutcomeFamily::normal;
  c.cluster_count = 200;
  c.cluster_size = 25;
  c.icc = 0.1;
  c.assign_prob = 0.5;
  c.distance_median = name == "table7-t1" ? 1.5 : 2.5;
  c.seed = name == "table7-t1" ? 2008 : 2015;
  return c;
}

std::vector<std::string> preset_names() { return {"table7-t1", "table7-t2"}; }

nlohmann::json to_json(const Truth& t) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  auto pair = [&](std::pair<double, double> p) { return nlohmann::json{num(p.first), num(p.second)}; };
  return {{"shares",
           {{"pi_00", t.shares.pi_00},
            {"pi_11", t.shares.pi_11},
            {"pi_22", t.shares.pi_22},
            {"pi_02", t.shares.pi_02},
            {"pi_12", t.shares.pi_12}}},
          {"tau_02", num(t.tau_02)},
          {"tau_12", num(t.tau_12)},
          {"late", num(t.late)},
          {"itt", num(t.itt)},
          {"mu0", num(t.mu0)},
          {"mu1", num(t.mu1)},
          {"complier_outcome_mean", num(t.complier_outcome_mean)},
          {"bounds",
           {{"complier_outcome", pair(t.bounds.complier_outcome)},
            {"complier_effect", pair(t.bounds.complier_effect)},
            {"substitutor_effect", pair(t.bounds.substitutor_effect)},
            {"c1", num(t.bounds.c1)},
            {"c2", num(t.bounds.c2)}}}};
}

namespace {

// Completes complier and substitutor bounds from complier outcome bounds.
void fill_effect_bounds(Truth& t, std::pair<double, double> outcome) {
  t.bounds.complier_outcome = outcome;
  t.bounds.complier_effect = {outcome.first - t.mu0, outcome.second - t.mu0};
  const ShareVector& s = t.shares;
  if (s.pi_12 > 0.0) {
    auto at = [&](double tau02) {
      return (t.late * (s.pi_02 + s.pi_12) - s.pi_02 * tau02) / s.pi_12;
    };
    t.bounds.substitutor_effect = {at(t.bounds.complier_effect.second),
                                   at(t.bounds.complier_effect.first)};
  } else {
    t.bounds.substitutor_effect = {kNaN, kNaN};
  }
}

}  // namespace

Truth finite_population_truth(std::span<const Stratum> strata,
                              std::span<const std::array<double, 3>> potential,
                              std::span<const double> weights) {
  Truth t;
  std::array<double, kStrataCount> w{};
  double total = 0.0;
  double c_y0 = 0.0, c_y2 = 0.0, s_y1 = 0.0, s_y2 = 0.0;
  std::vector<double> mix_y, mix_w;
  for (std::size_t i = 0; i < strata.size(); ++i) {
    const double wi = weights.empty() ? 1.0 : weights[i];
    w[idx(strata[i])] += wi;
    total += wi;
    if (strata[i] == Stratum::complier) {
      c_y0 += wi * potential[i][0];
      c_y2 += wi * potential[i][2];
    } else if (strata[i] == Stratum::substitutor) {
      s_y1 += wi * potential[i][1];
      s_y2 += wi * potential[i][2];
    }
    if (strata[i] == Stratum::complier || strata[i] == Stratum::substitutor) {
      mix_y.push_back(potential[i][2]);
      mix_w.push_back(wi);
    }
  }
  const double wc = w[idx(Stratum::complier)];
  const double ws = w[idx(Stratum::substitutor)];
  t.shares = {w[0] / total, w[1] / total, w[2] / total, wc / total, ws / total};
  t.mu0 = wc > 0 ? c_y0 / wc : kNaN;
  t.complier_outcome_mean = wc > 0 ? c_y2 / wc : kNaN;
  t.tau_02 = wc > 0 ? (c_y2 - c_y0) / wc : kNaN;
  t.mu1 = ws > 0 ? s_y1 / ws : kNaN;
  t.tau_12 = ws > 0 ? (s_y2 - s_y1) / ws : kNaN;
  t.itt = ((c_y2 - c_y0) + (s_y2 - s_y1)) / total;
  t.late = wc + ws > 0 ? ((c_y2 - c_y0) + (s_y2 - s_y1)) / (wc + ws) : kNaN;

  if (wc > 0.0) {
    const auto mix = StepDistribution::from_points(mix_y, mix_w);
    const double p = wc / (wc + ws);
    if (ws == 0.0) {
      const double m = mix.mean();
      t.bounds.c1 = mix.support.back();
      t.bounds.c2 = mix.support.front();
      fill_effect_bounds(t, {m, m});
    } else {
      const auto lo = lower_tail(mix.support, mix.mass, p);
      const auto hi = upper_tail(mix.support, mix.mass, p);
      t.bounds.c1 = lo.cutpoint;
      t.bounds.c2 = mix.quantile(1.0 - p);
      fill_effect_bounds(t, {lo.mean, hi.mean});
    }
  } else {
    t.bounds.complier_outcome = t.bounds.complier_effect = {kNaN, kNaN};
    t.bounds.substitutor_effect = {t.tau_12, t.tau_12};
    t.bounds.c1 = t.bounds.c2 = kNaN;
  }
  return t;
}

namespace {

// Y(2) law of one stratum: family location-scale around `mean`.
struct Component {
  OutcomeFamily family;
  double mean;
  double sd;

  double cdf(double y) const {
    const double z = (y - mean) / sd;
    if (family == OutcomeFamily::normal) return 0.5 * std::erfc(-z / std::numbers::sqrt2);
    const double a = std::sqrt(3.0);
    return std::clamp((z + a) / (2.0 * a), 0.0, 1.0);
  }
  // E[Y 1(Y <= y)].
  double partial_expectation(double y) const {
    const double z = (y - mean) / sd;
    if (family == OutcomeFamily::normal) {
      const double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
      return mean * cdf(y) - sd * phi;
    }
    const double half = std::sqrt(3.0) * sd;
    const double lo = mean - half;
    const double hi = std::min(y, mean + half);
    if (hi <= lo) return 0.0;
    return (hi * hi - lo * lo) / (4.0 * half);
  }
  double lowest() const {
    return family == OutcomeFamily::normal ? mean - 40.0 * sd : mean - std::sqrt(3.0) * sd;
  }
  double highest() const {
    return family == OutcomeFamily::normal ? mean + 40.0 * sd : mean + std::sqrt(3.0) * sd;
  }
};

// inf{y : F(y) >= level} for a continuous, nondecreasing F.
template <class F>
double bisect_quantile(F&& cdf, double lo, double hi, double level) {
  for (int it = 0; it < 400 && hi - lo > 1e-15 * std::max(1.0, std::abs(lo) + std::abs(hi));
       ++it) {
    const double mid = 0.5 * (lo + hi);
    if (cdf(mid) >= level) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

}  // namespace

BoundsTruth analytic_bounds(const DgpConfig& config) {
  config.validate();
  if (config.icc > 0.0 && config.family != OutcomeFamily::normal && config.outcome_noise > 0.0) {
    throw Error(ErrorKind::UnsupportedFamily,
                std::string("no closed-form outcome law for the ") +
                    std::string(to_string(config.family)) + " family with icc > 0");
  }
  Truth t = super_population_truth(config);
  return t.bounds;
}

Truth super_population_truth(const DgpConfig& config) {
  config.validate();
  Truth t;
  const auto& p = config.strata_probs;
  const auto& m = config.outcome_means;
  t.shares = {p[0], p[1], p[2], p[3], p[4]};
  const double pc = p[idx(Stratum::complier)];
  const double ps = p[idx(Stratum::substitutor)];
  const auto& mc = m[idx(Stratum::complier)];
  const auto& ms = m[idx(Stratum::substitutor)];
  t.mu0 = pc > 0 ? mc[0] : kNaN;
  t.complier_outcome_mean = pc > 0 ? mc[2] : kNaN;
  t.tau_02 = pc > 0 ? mc[2] - mc[0] : kNaN;
  t.mu1 = ps > 0 ? ms[1] : kNaN;
  t.tau_12 = ps > 0 ? ms[2] - ms[1] : kNaN;
  t.itt = (pc > 0 ? pc * t.tau_02 : 0.0) + (ps > 0 ? ps * t.tau_12 : 0.0);
  t.late = pc + ps > 0 ? t.itt / (pc + ps) : kNaN;

  if (!(pc > 0.0)) {
    t.bounds.complier_outcome = t.bounds.complier_effect = {kNaN, kNaN};
    t.bounds.substitutor_effect = {t.tau_12, t.tau_12};
    t.bounds.c1 = t.bounds.c2 = kNaN;
    return t;
  }
  const double frac = pc / (pc + ps);
  const double sd = config.outcome_noise;
  const bool non_normal = config.family != OutcomeFamily::normal;
  if (config.icc > 0.0 && non_normal && sd > 0.0) {
    // Only the normal family has a closed form with a cluster effect; the
    // bounds are left undefined here and analytic_bounds refuses.
    t.bounds.complier_outcome = t.bounds.complier_effect = {kNaN, kNaN};
    t.bounds.substitutor_effect = {kNaN, kNaN};
    t.bounds.c1 = t.bounds.c2 = kNaN;
    return t;
  }

  if (ps == 0.0) {
    // Point identification: nothing is trimmed, c1 sits at the support top.
    const Component c{config.family, mc[2], sd};
    t.bounds.c1 = sd > 0.0 ? c.highest() : mc[2];
    t.bounds.c2 = sd > 0.0 ? c.lowest() : mc[2];
    if (config.family == OutcomeFamily::two_point && sd > 0.0) {
      t.bounds.c1 = mc[2] + sd;
      t.bounds.c2 = mc[2] - sd;
    }
    fill_effect_bounds(t, {mc[2], mc[2]});
    return t;
  }

  if (sd == 0.0 || config.family == OutcomeFamily::two_point) {
    // Atoms: exact discrete trimming.
    std::vector<double> ys, ws;
    auto add = [&](double mean, double w) {
      if (sd == 0.0) {
        ys.push_back(mean);
        ws.push_back(w);
      } else {
        ys.push_back(mean - sd);
        ws.push_back(0.5 * w);
        ys.push_back(mean + sd);
        ws.push_back(0.5 * w);
      }
    };
    add(mc[2], pc);
    add(ms[2], ps);
    const auto mix = StepDistribution::from_points(ys, ws);
    const auto lo = lower_tail(mix.support, mix.mass, frac);
    const auto hi = upper_tail(mix.support, mix.mass, frac);
    t.bounds.c1 = lo.cutpoint;
    t.bounds.c2 = mix.quantile(1.0 - frac);
    fill_effect_bounds(t, {lo.mean, hi.mean});
    return t;
  }

  const Component cc{config.family, mc[2], sd};
  const Component cs{config.family, ms[2], sd};
  const double wc = frac;
  const double ws = 1.0 - frac;
  auto cdf = [&](double y) { return wc * cc.cdf(y) + ws * cs.cdf(y); };
  auto pe = [&](double y) {
    return wc * cc.partial_expectation(y) + ws * cs.partial_expectation(y);
  };
  const double lo = std::min(cc.lowest(), cs.lowest());
  const double hi = std::max(cc.highest(), cs.highest());
  const double mean = wc * mc[2] + ws * ms[2];
  const double c1 = bisect_quantile(cdf, lo, hi, frac);
  const double c2 = bisect_quantile(cdf, lo, hi, 1.0 - frac);
  t.bounds.c1 = c1;
  t.bounds.c2 = c2;
  fill_effect_bounds(t, {pe(c1) / frac, (mean - pe(c2)) / frac});
  return t;
}

namespace {

double standard_draw(OutcomeFamily f, std::mt19937_64& rng,
                     std::normal_distribution<double>& normal,
                     std::uniform_real_distribution<double>& unit) {
  switch (f) {
    case OutcomeFamily::normal: return normal(rng);
    case OutcomeFamily::uniform: return std::sqrt(3.0) * (2.0 * unit(rng) - 1.0);
    case OutcomeFamily::two_point: return unit(rng) < 0.5 ? -1.0 : 1.0;
  }
  return 0.0;
}

}  // namespace

SyntheticPopulation generate(const DgpConfig& config) {
  config.validate();
  auto outcome_rng = substream(config.seed, 0);
  auto assign_rng = substream(config.seed, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::discrete_distribution<int> stratum_draw(config.strata_probs.begin(),
                                               config.strata_probs.end());

  const std::size_t G = config.cluster_count;
  const std::size_t n = config.unit_count();
  const double sd_cluster = std::sqrt(config.icc) * config.outcome_noise;
  const double sd_unit = std::sqrt(1.0 - config.icc) * config.outcome_noise;

  // Cluster-level complete randomization within each block.
  std::vector<int> cluster_z(G, 0);
  for (std::size_t b = 0; b < config.blocks; ++b) {
    std::vector<std::size_t> members;
    for (std::size_t c = b; c < G; c += config.blocks) members.push_back(c);
    const double prob =
        config.block_assign_prob.empty() ? config.assign_prob : config.block_assign_prob[b];
    const auto m = static_cast<long>(members.size());
    const long k = std::clamp(std::lround(prob * static_cast<double>(m)), 1L, m - 1);
    std::shuffle(members.begin(), members.end(), assign_rng);
    for (long i = 0; i < k; ++i) cluster_z[members[static_cast<std::size_t>(i)]] = 1;
  }

  std::vector<UnitRecord> units;
  units.reserve(n);
  std::vector<Stratum> strata;
  strata.reserve(n);
  std::vector<std::array<double, 3>> potential;
  potential.reserve(n);
  for (std::size_t c = 0; c < G; ++c) {
    const double u = sd_cluster > 0.0
                         ? sd_cluster * standard_draw(config.family, outcome_rng, normal, unit)
                         : 0.0;
    const std::size_t b = c % config.blocks;
    for (std::size_t j = 0; j < config.cluster_size; ++j) {
      const auto s = static_cast<Stratum>(stratum_draw(outcome_rng));
      std::array<double, 3> y{};
      for (int d = 0; d < 3; ++d) {
        const double e =
            sd_unit > 0.0 ? sd_unit * standard_draw(config.family, outcome_rng, normal, unit) : 0.0;
        y[d] = config.outcome_means[idx(s)][d] + u + e;
      }
      UnitRecord r;
      r.unit_id = "u" + std::to_string(units.size() + 1);
      r.cluster_id = "c" + std::to_string(c + 1);
      r.block_id = config.blocks == 1 ? std::string(kDefaultBlock) : "b" + std::to_string(b + 1);
      r.z = cluster_z[c];
      r.d = take_up(s, r.z);
      r.y = y[r.d];
      if (config.distance_median > 0.0) {
        r.aux["distance"] = config.distance_median * std::exp(0.5 * normal(outcome_rng));
      }
      units.push_back(std::move(r));
      strata.push_back(s);
      potential.push_back(y);
    }
  }
  Truth finite = finite_population_truth(strata, potential, {});
  Truth super = super_population_truth(config);
  return SyntheticPopulation{config, Sample("simulated", std::move(units)), std::move(strata),
                             std::move(potential), finite, super};
}

SyntheticPopulation small_instance(std::mt19937_64& rng, const SmallInstanceSpec& spec) {
  auto uniform_int = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  std::uniform_real_distribution<double> unit(0.0, 10.0);
  auto value = [&]() {
    if (spec.integer_levels > 0) {
      return static_cast<double>(
          std::uniform_int_distribution<int>(0, spec.integer_levels - 1)(rng));
    }
    return unit(rng);
  };
  const std::size_t T = uniform_int(1, std::max<std::size_t>(spec.max_treated_program, 1));
  const std::size_t nc = uniform_int(1, T);
  const std::size_t na = uniform_int(0, T - nc);
  const std::size_t ns = T - nc - na;
  const std::size_t nn = uniform_int(0, 3);
  const std::size_t n11 = uniform_int(0, 3);

  std::vector<Stratum> arm;
  arm.insert(arm.end(), nc, Stratum::complier);
  arm.insert(arm.end(), ns, Stratum::substitutor);
  arm.insert(arm.end(), na, Stratum::always_taker);
  arm.insert(arm.end(), nn, Stratum::never_taker);
  arm.insert(arm.end(), n11, Stratum::adherent);

  std::vector<UnitRecord> units;
  std::vector<Stratum> strata;
  std::vector<std::array<double, 3>> potential;
  std::vector<double> always_y2;
  for (int z = 1; z >= 0; --z) {
    std::size_t at = 0;
    for (Stratum s : arm) {
      std::array<double, 3> y{value(), value(), value()};
      if (s == Stratum::always_taker) {
        if (z == 1) {
          always_y2.push_back(y[2]);
        } else {
          y[2] = always_y2[at++];
        }
      }
      UnitRecord r;
      r.unit_id = "u" + std::to_string(units.size() + 1);
      r.cluster_id = r.unit_id;
      r.z = z;
      r.d = take_up(s, z);
      r.y = y[r.d];
      units.push_back(std::move(r));
      strata.push_back(s);
      potential.push_back(y);
    }
  }
  DgpConfig config;
  config.cluster_count = units.size();
  config.cluster_size = 1;
  Truth finite = finite_population_truth(strata, potential, {});
  return SyntheticPopulation{config, Sample("small", std::move(units)), std::move(strata),
                             std::move(potential), finite, finite};
}

std::pair<double, double> brute_force_complier_mean(std::span<const double> treated_program,
                                                    std::span<const double> always_takers,
                                                    std::size_t compliers) {
  const std::size_t n = treated_program.size();
  if (n > 20) {
    throw Error(ErrorKind::TooLarge, "treated program cell has " + std::to_string(n) +
                                         " units; exhaustive search allows at most 20");
  }
  if (compliers == 0 || compliers + always_takers.size() > n) {
    throw Error(ErrorKind::InvalidConfig, "labeling counts do not fit the treated cell");
  }
  std::vector<double> values(treated_program.begin(), treated_program.end());
  std::sort(values.begin(), values.end());
  std::vector<double> at(always_takers.begin(), always_takers.end());
  std::sort(at.begin(), at.end());

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  // Every subset of the given size, in Gosper order.
  std::uint32_t mask = (1u << compliers) - 1u;
  const std::uint32_t limit = 1u << n;
  while (mask < limit) {
    // The units left over must contain the always-taker outcomes.
    std::size_t j = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) {
        sum += values[i];
      } else if (j < at.size() && values[i] == at[j]) {
        ++j;
      }
    }
    if (j == at.size()) {
      const double mean = sum / static_cast<double>(compliers);
      lo = std::min(lo, mean);
      hi = std::max(hi, mean);
    }
    const std::uint32_t c = mask & (~mask + 1u);
    const std::uint32_t r = mask + c;
    mask = (((r ^ mask) >> 2) / c) | r;
  }
  if (!std::isfinite(lo)) {
    throw Error(ErrorKind::InvalidConfig, "no labeling is consistent with the always takers");
  }
  return {lo, hi};
}

std::pair<double, double> brute_force_sharpness(const SyntheticPopulation& population) {
  const Sample& s = population.sample;
  std::size_t arm_n[2] = {0, 0};
  std::size_t control_no_take_up = 0;
  std::size_t treated_no_take_up = 0;
  std::vector<double> treated_program, always;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.weight()[i] != s.weight()[0]) {
      throw Error(ErrorKind::InvalidConfig, "brute force needs equal unit weights");
    }
    const int z = s.z()[i];
    const int d = s.d()[i];
    ++arm_n[z];
    if (d == kNoTakeUp) ++(z == 1 ? treated_no_take_up : control_no_take_up);
    if (d == kProgram) (z == 1 ? treated_program : always).push_back(s.y()[i]);
  }
  if (arm_n[0] != arm_n[1]) {
    throw Error(ErrorKind::InvalidConfig, "brute force needs equal arm sizes");
  }
  if (control_no_take_up < treated_no_take_up) {
    throw Error(ErrorKind::InvalidConfig, "negative complier count");
  }
  const std::size_t compliers = control_no_take_up - treated_no_take_up;
  return brute_force_complier_mean(treated_program, always, compliers);
}

}  // namespace strata
