#include "strata/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <boost/math/distributions/normal.hpp>

#include "strata/rng.hpp"

namespace strata {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

std::string_view to_string(ResampleUnit u) {
  return u == ResampleUnit::cluster ? "cluster" : "unit";
}

std::string_view to_string(CiMethod m) { return m == CiMethod::percentile ? "percentile" : "normal"; }

ResampleUnit parse_resample_unit(std::string_view name) {
  if (name == "cluster") return ResampleUnit::cluster;
  if (name == "unit") return ResampleUnit::unit;
  throw Error(ErrorKind::InvalidSpec, "resample unit must be cluster or unit");
}

CiMethod parse_ci_method(std::string_view name) {
  if (name == "percentile") return CiMethod::percentile;
  if (name == "normal") return CiMethod::normal;
  throw Error(ErrorKind::InvalidSpec, "ci method must be percentile or normal");
}

void BootstrapSpec::validate() const {
  if (reps == 0) throw Error(ErrorKind::InvalidSpec, "reps must be positive");
  if (ci_method == CiMethod::percentile && reps < 100) {
    throw Error(ErrorKind::InvalidSpec, "percentile intervals need at least 100 replicates");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::InvalidSpec, "alpha must lie in (0, 1)");
  if (!(max_failure_fraction >= 0.0 && max_failure_fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidSpec, "max_failure_fraction must lie in [0, 1]");
  }
}

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("STRATA_BOUNDS_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& body) {
  threads = std::min(resolve_threads(threads), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    while (!stop.load(std::memory_order_relaxed)) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        stop = true;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

Resampler::Resampler(const Sample& sample, ResampleUnit unit) : sample_(&sample) {
  const auto blocks = sample.block_index();
  block_clusters_.resize(sample.block_count());
  if (unit == ResampleUnit::cluster) {
    cluster_rows_.resize(sample.cluster_count());
    for (std::size_t i = 0; i < sample.size(); ++i) {
      cluster_rows_[sample.cluster_index()[i]].push_back(static_cast<std::uint32_t>(i));
    }
    for (std::size_t c = 0; c < cluster_rows_.size(); ++c) {
      if (cluster_rows_[c].empty()) continue;
      block_clusters_[blocks[cluster_rows_[c].front()]].push_back(static_cast<std::uint32_t>(c));
      cluster_key_.push_back(static_cast<std::uint32_t>(c));
    }
  } else {
    cluster_rows_.resize(sample.size());
    for (std::size_t i = 0; i < sample.size(); ++i) {
      cluster_rows_[i] = {static_cast<std::uint32_t>(i)};
      block_clusters_[blocks[i]].push_back(static_cast<std::uint32_t>(i));
    }
  }
}

Sample Resampler::draw(std::mt19937_64& rng) const {
  std::vector<std::uint32_t> rows, cluster_of_row, origin;
  rows.reserve(sample_->size());
  cluster_of_row.reserve(sample_->size());
  const bool by_unit = cluster_key_.empty();
  for (const auto& members : block_clusters_) {
    if (members.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    for (std::size_t k = 0; k < members.size(); ++k) {
      const std::uint32_t c = members[pick(rng)];
      const auto id = static_cast<std::uint32_t>(origin.size());
      // Unit draws keep the unit's own cluster as the origin.
      origin.push_back(by_unit ? sample_->cluster_index()[c] : c);
      for (std::uint32_t r : cluster_rows_[c]) {
        rows.push_back(r);
        cluster_of_row.push_back(id);
      }
    }
  }
  return sample_->gather(rows, cluster_of_row, origin);
}

Sample resample(const Sample& sample, ResampleUnit unit, std::mt19937_64& rng) {
  return Resampler(sample, unit).draw(rng);
}

namespace {

const std::vector<std::string>& registry() {
  static const std::vector<std::string> names = {
      "itt",      "control_mean", "first_stage", "late",     "pi_00",    "pi_11",
      "pi_22",    "pi_02",        "pi_12",       "mu0",      "mu1",      "betaL_02",
      "betaU_02", "tauL_02",      "tauU_02",     "tauL_12",  "tauU_12"};
  return names;
}

bool needs_bounds(const std::string& n) {
  return n.starts_with("beta") || n.starts_with("tau");
}

// Re-evaluates a statistic that came out NaN on the full sample so the
// estimator's own error reaches the caller.
[[noreturn]] void raise_point_failure(const Sample& sample, const std::string& n,
                                      const BoundsOptions& opts) {
  const CellMeans cells = cell_means(sample);
  const ShareVector used = shares_for_use(shares_from_cells(cells, opts.estimator), opts.estimator);
  if (n == "late") late_from_cells(cells, opts.estimator);
  if (n == "mu0") mu0_from_cells(cells, used, opts.estimator);
  if (n == "mu1") mu1_from_cells(cells, used, opts.estimator);
  if (needs_bounds(n)) analyze_bounds(sample, opts);
  std::ostringstream msg;
  msg << n << " is not defined on this sample (pi_02 = " << used.pi_02
      << ", pi_12 = " << used.pi_12 << ", floor " << opts.estimator.share_floor << ")";
  throw Error(ErrorKind::WeakShare, msg.str());
}

}  // namespace

std::vector<std::string> statistic_names() { return registry(); }

bool is_statistic(std::string_view name) {
  const auto& r = registry();
  return std::find(r.begin(), r.end(), name) != r.end();
}

std::vector<double> compute_statistics(const Sample& sample, const std::vector<std::string>& names,
                                       const BoundsOptions& opts) {
  std::vector<double> out(names.size(), kNaN);
  const CellMeans cells = cell_means(sample);
  const StrataShares shares = shares_from_cells(cells, opts.estimator);
  const ShareVector used = shares_for_use(shares, opts.estimator);

  std::optional<BoundsAnalysis> analysis;
  if (std::any_of(names.begin(), names.end(), needs_bounds)) {
    try {
      analysis = analyze_bounds(sample, opts);
    } catch (const Error&) {
    }
  }
  auto guarded = [](auto&& f) {
    try {
      return f();
    } catch (const Error&) {
      return kNaN;
    }
  };
  for (std::size_t k = 0; k < names.size(); ++k) {
    const std::string& n = names[k];
    double v = kNaN;
    if (n == "itt") {
      v = itt_from_cells(cells);
    } else if (n == "control_mean") {
      v = cells.arm_mean(0);
    } else if (n == "first_stage") {
      v = first_stage_from_cells(cells);
    } else if (n == "late") {
      v = guarded([&] { return late_from_cells(cells, opts.estimator); });
    } else if (n == "pi_00") {
      v = used.pi_00;
    } else if (n == "pi_11") {
      v = used.pi_11;
    } else if (n == "pi_22") {
      v = used.pi_22;
    } else if (n == "pi_02") {
      v = used.pi_02;
    } else if (n == "pi_12") {
      v = used.pi_12;
    } else if (n == "mu0") {
      v = guarded([&] { return mu0_from_cells(cells, used, opts.estimator); });
    } else if (n == "mu1") {
      v = guarded([&] { return mu1_from_cells(cells, used, opts.estimator); });
    } else if (analysis) {
      if (n == "betaL_02") v = analysis->complier_outcome.lower;
      if (n == "betaU_02") v = analysis->complier_outcome.upper;
      if (n == "tauL_02") v = analysis->complier_effect.lower;
      if (n == "tauU_02") v = analysis->complier_effect.upper;
      if (n == "tauL_12") v = analysis->substitutor_effect.lower;
      if (n == "tauU_12") v = analysis->substitutor_effect.upper;
    } else if (!is_statistic(n)) {
      throw Error(ErrorKind::InvalidSpec, "unknown statistic '" + n + "'");
    }
    out[k] = std::isfinite(v) ? v : kNaN;
  }
  return out;
}

std::pair<double, double> percentile_interval(std::vector<double> values, double alpha) {
  std::sort(values.begin(), values.end());
  auto q = [&](double p) {
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  return {q(alpha / 2.0), q(1.0 - alpha / 2.0)};
}

std::pair<double, double> normal_interval(double point, double se, double alpha) {
  const boost::math::normal_distribution<double> phi;
  const double z = boost::math::quantile(phi, 1.0 - alpha / 2.0);
  return {point - z * se, point + z * se};
}

double replicate_sd(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  double m = 0.0;
  for (double v : values) m += v;
  m /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

BootstrapResult bootstrap(const Sample& sample, const std::vector<std::string>& names,
                          const BootstrapSpec& spec, const BoundsOptions& opts, bool strict) {
  spec.validate();
  for (const auto& n : names) {
    if (!is_statistic(n)) throw Error(ErrorKind::InvalidSpec, "unknown statistic '" + n + "'");
  }
  BootstrapResult res;
  res.names = names;
  res.point = compute_statistics(sample, names, opts);
  if (strict) {
    for (std::size_t s = 0; s < names.size(); ++s) {
      if (!std::isfinite(res.point[s])) raise_point_failure(sample, names[s], opts);
    }
  }

  const Resampler resampler(sample, spec.resample_unit);
  std::vector<std::vector<double>> by_rep(spec.reps);
  parallel_for(spec.reps, spec.threads, [&](std::size_t r) {
    auto rng = substream(spec.seed, r);
    try {
      by_rep[r] = compute_statistics(resampler.draw(rng), names, opts);
    } catch (const Error&) {
      by_rep[r].assign(names.size(), kNaN);
    }
  });

  res.replicates.assign(names.size(), std::vector<double>(spec.reps));
  res.errors.resize(names.size());
  for (std::size_t s = 0; s < names.size(); ++s) {
    std::vector<double> ok;
    ok.reserve(spec.reps);
    for (std::size_t r = 0; r < spec.reps; ++r) {
      res.replicates[s][r] = by_rep[r][s];
      if (std::isfinite(by_rep[r][s])) ok.push_back(by_rep[r][s]);
    }
    const std::size_t failed = spec.reps - ok.size();
    const double failure_fraction = static_cast<double>(failed) / static_cast<double>(spec.reps);

    EstimateReport rep;
    rep.name = names[s];
    rep.point = res.point[s];
    rep.method = EstimateMethod::cluster_bootstrap;
    rep.meta = {{"reps", spec.reps},
                {"seed", spec.seed},
                {"alpha", spec.alpha},
                {"resample_unit", to_string(spec.resample_unit)},
                {"ci_method", to_string(spec.ci_method)},
                {"failed_replicates", failed},
                {"failure_fraction", failure_fraction}};
    if (!std::isfinite(rep.point)) {
      res.errors[s] = "statistic is not computable on the full sample";
    } else if (failure_fraction > spec.max_failure_fraction || ok.size() < 2) {
      std::ostringstream msg;
      msg << names[s] << ": " << failed << " of " << spec.reps << " replicates failed";
      res.errors[s] = msg.str();
    }
    if (res.errors[s]) {
      rep.meta["error"] = *res.errors[s];
      if (strict) throw Error(ErrorKind::TooManyFailures, *res.errors[s]);
    } else {
      rep.se = replicate_sd(ok);
      rep.ci = spec.ci_method == CiMethod::percentile
                   ? percentile_interval(ok, spec.alpha)
                   : normal_interval(rep.point, *rep.se, spec.alpha);
      rep.meta["point_outside_ci"] = rep.point < rep.ci->first || rep.point > rep.ci->second;
    }
    res.reports.push_back(std::move(rep));
  }
  return res;
}

EstimateReport bootstrap_ci(const Sample& sample, std::string_view statistic,
                            const BootstrapSpec& spec, const BoundsOptions& opts,
                            std::vector<double>* replicates) {
  BootstrapResult r = bootstrap(sample, {std::string(statistic)}, spec, opts, true);
  if (replicates) *replicates = std::move(r.replicates.front());
  return std::move(r.reports.front());
}

}  // namespace strata
