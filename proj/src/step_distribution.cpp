#include "strata/step_distribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "strata/error.hpp"

namespace strata {

StepDistribution StepDistribution::from_points(std::span<const double> values,
                                               std::span<const double> weights) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  StepDistribution out;
  double total = 0.0;
  for (std::size_t k : order) {
    if (out.support.empty() || values[k] != out.support.back()) {
      out.support.push_back(values[k]);
      out.mass.push_back(0.0);
    }
    out.mass.back() += weights[k];
    total += weights[k];
  }
  for (double& m : out.mass) m /= total;
  return out;
}

double StepDistribution::cdf(double y) const {
  auto it = std::upper_bound(support.begin(), support.end(), y);
  const auto n = static_cast<std::size_t>(it - support.begin());
  double c = 0.0;
  for (std::size_t k = 0; k < n; ++k) c += mass[k];
  return c;
}

double StepDistribution::cdf_below(double y) const {
  auto it = std::lower_bound(support.begin(), support.end(), y);
  const auto n = static_cast<std::size_t>(it - support.begin());
  double c = 0.0;
  for (std::size_t k = 0; k < n; ++k) c += mass[k];
  return c;
}

double StepDistribution::quantile(double level) const {
  double c = 0.0;
  for (std::size_t k = 0; k < support.size(); ++k) {
    c += mass[k];
    if (c >= level - kLevelTolerance) return support[k];
  }
  return support.empty() ? 0.0 : support.back();
}

double StepDistribution::mean() const {
  double m = 0.0;
  for (std::size_t k = 0; k < support.size(); ++k) m += mass[k] * support[k];
  return m;
}

std::size_t generalized_inverse_index(std::span<const double> cumulative, double level) {
  for (std::size_t k = 0; k < cumulative.size(); ++k) {
    if (cumulative[k] >= level - kLevelTolerance) return k;
  }
  return cumulative.empty() ? 0 : cumulative.size() - 1;
}

double silverman_bandwidth(std::span<const double> values, std::span<const double> weights) {
  double w = 0.0, w2 = 0.0, m = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    w += weights[i];
    w2 += weights[i] * weights[i];
    m += weights[i] * values[i];
  }
  if (!(w > 0.0)) return 0.0;
  m /= w;
  double v = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    v += weights[i] * (values[i] - m) * (values[i] - m);
  }
  const double sd = std::sqrt(v / w);
  const auto dist = StepDistribution::from_points(values, weights);
  const double iqr = dist.quantile(0.75) - dist.quantile(0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  const double n_eff = w * w / w2;
  return 0.9 * spread * std::pow(n_eff, -0.2);
}

TailTrim lower_tail(std::span<const double> support, std::span<const double> mass,
                    double fraction) {
  if (!(fraction > 0.0) || support.empty()) {
    throw Error(ErrorKind::WeakShare, "cannot trim to a nonpositive mass fraction");
  }
  TailTrim t;
  double cumulative = 0.0;
  double sum = 0.0;
  std::size_t k = 0;
  for (; k < support.size(); ++k) {
    if (cumulative + mass[k] >= fraction - kLevelTolerance) break;
    cumulative += mass[k];
    sum += mass[k] * support[k];
  }
  if (k == support.size()) k = support.size() - 1;
  t.cut_index = k;
  t.cutpoint = support[k];
  t.boundary_mass = std::clamp(fraction - cumulative, 0.0, mass[k]);
  sum += t.boundary_mass * support[k];
  t.retained_mass = cumulative + t.boundary_mass;
  t.mean = sum / fraction;
  return t;
}

TailTrim upper_tail(std::span<const double> support, std::span<const double> mass,
                    double fraction) {
  if (!(fraction > 0.0) || support.empty()) {
    throw Error(ErrorKind::WeakShare, "cannot trim to a nonpositive mass fraction");
  }
  TailTrim t;
  double cumulative = 0.0;
  double sum = 0.0;
  std::size_t k = support.size();
  while (k > 0) {
    --k;
    if (cumulative + mass[k] >= fraction - kLevelTolerance) break;
    cumulative += mass[k];
    sum += mass[k] * support[k];
    if (k == 0) break;
  }
  t.cut_index = k;
  t.cutpoint = support[k];
  t.boundary_mass = std::clamp(fraction - cumulative, 0.0, mass[k]);
  sum += t.boundary_mass * support[k];
  t.retained_mass = cumulative + t.boundary_mass;
  t.mean = sum / fraction;
  return t;
}

}  // namespace strata
