#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace strata {

// Discrete distribution on sorted distinct support points.
struct StepDistribution {
  std::vector<double> support;
  std::vector<double> mass;  // nonnegative, sums to 1

  // Builds from weighted observations (weights > 0); ties are merged.
  static StepDistribution from_points(std::span<const double> values,
                                      std::span<const double> weights);

  bool empty() const { return support.empty(); }
  // P(Y <= y) and P(Y < y).
  double cdf(double y) const;
  double cdf_below(double y) const;
  // inf{y : P(Y <= y) >= level}.
  double quantile(double level) const;
  double mean() const;
};

// Result of keeping `fraction` of the mass from one tail, splitting the
// boundary atom so the retained mass is exact.
struct TailTrim {
  double mean = 0.0;
  double cutpoint = 0.0;      // support point holding the boundary atom
  std::size_t cut_index = 0;
  double boundary_mass = 0.0; // mass taken from the boundary atom
  double retained_mass = 0.0; // equals fraction up to rounding
};

// Tolerance used when comparing cumulative mass against a quantile level.
inline constexpr double kLevelTolerance = 1e-12;

// Index of inf{y : cumulative(y) >= level}, for cumulative values given at
// each support point.
std::size_t generalized_inverse_index(std::span<const double> cumulative, double level);

// Silverman rule of thumb 0.9 * min(sd, IQR / 1.34) * n_eff^(-1/5) for
// weighted data, n_eff being the Kish effective sample size. Falls back to
// sd when the IQR is zero.
double silverman_bandwidth(std::span<const double> values, std::span<const double> weights);

TailTrim lower_tail(std::span<const double> support, std::span<const double> mass,
                    double fraction);
TailTrim upper_tail(std::span<const double> support, std::span<const double> mass,
                    double fraction);

}  // namespace strata
