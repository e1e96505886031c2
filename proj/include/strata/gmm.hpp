#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>

#include <Eigen/Dense>

#include "json.hpp"
#include "strata/data_model.hpp"
#include "strata/strata_estimators.hpp"

namespace strata {

// Bound endpoints with an analytic sandwich variance.
enum class GmmTarget { tauL_02, tauU_02, tauL_12, tauU_12 };

std::string_view to_string(GmmTarget t);
GmmTarget parse_gmm_target(std::string_view name);

inline constexpr int kMoments = 11;
using Vector11 = Eigen::Matrix<double, kMoments, 1>;
using Matrix11 = Eigen::Matrix<double, kMoments, kMoments>;

// Parameter slots, theta then gamma:
//   0 mu_T1  truncated partial mean of Y in the treated program cell
//   1 mu_T0  same in the control program cell
//   2 mu_b   focal stratum's baseline mean (mu0 or mu1)
//   3 c      cutpoint
//   4 kappa1 tail probability at c in the control program cell
//   5 kappa2 mean of Y in the treated cell with the baseline take-up
//   6 pi_00, 7 pi_02, 8 pi_12, 9 pi_22, 10 kappa3 = pi_11
enum GmmParam { kMuT1, kMuT0, kMuBase, kCut, kKappa1, kKappa2, kPi00, kPi02, kPi12, kPi22, kKappa3 };

struct GmmOptions {
  EstimatorOptions estimator;
  double density_floor = 1e-6;
  double condition_limit = 1e10;
  // Kernel bandwidths for f_21(c) and f_20(c); Silverman when unset.
  std::optional<double> bandwidth_treated;
  std::optional<double> bandwidth_control;
};

struct GmmModel {
  GmmTarget target = GmmTarget::tauL_02;
  // Baseline take-up of the focal stratum: 0 compliers, 1 substitutors.
  int focal_d0 = 0;
  // +1 keeps the tail below c, -1 the tail above.
  int tail = 1;
  // Weight given to units tied at c so the trim is exact.
  double tie_fraction = 1.0;
  Vector11 eta = Vector11::Zero();
  // Moments (and their paired parameters) used; cells absent from the
  // sample drop out.
  std::array<bool, kMoments> active{};

  Matrix11 H = Matrix11::Zero();
  Matrix11 Sigma = Matrix11::Zero();
  Matrix11 V = Matrix11::Zero();
  double condition_number = 0.0;

  double f_treated = 0.0;
  double f_control = 0.0;
  double h_treated = 0.0;
  double h_control = 0.0;

  // Design probabilities P(Z=z) and P(D=d, Z=z) under the unit weights.
  double p_z1 = 0.0, p_z0 = 0.0;
  double p_d2z1 = 0.0, p_d2z0 = 0.0;
  double p_base_z1 = 0.0, p_base_z0 = 0.0;
  double n_eff = 0.0;

  double estimate = 0.0;
  Vector11 gradient = Vector11::Zero();
  double variance = 0.0;
  double se = 0.0;

  // Tail indicator with the fractional tie weight.
  double tail_weight(double y) const;
};

// The 11 moment functions at one observation.
Vector11 moment_conditions(int z, int d, double y, const GmmModel& model);
Vector11 moment_conditions(const UnitRecord& unit, const GmmModel& model);

// IPW-weighted sample mean of the moment functions.
Vector11 mean_moments(const Sample& sample, const GmmModel& model);
// (1/W) sum w g g' under the unit weights, the empirical counterpart of Sigma.
Matrix11 empirical_sigma(const Sample& sample, const GmmModel& model);

// Fits parameters, assembles H and Sigma and the sandwich, and applies the
// delta method for the target.
GmmModel fit_gmm(const Sample& sample, GmmTarget target, const GmmOptions& opts = {});

EstimateReport asymptotic_variance(const Sample& sample, GmmTarget target,
                                   const GmmOptions& opts = {});

// Variance of the truncated means and the baseline mean when the shares
// and the cutpoint are held fixed.
struct SimplifiedVariance {
  double var_mu_t1 = 0.0;
  double var_mu_t0 = 0.0;
  double cov_mu_t1_mu_t0 = 0.0;
  double var_baseline = 0.0;
};

SimplifiedVariance simplified_variance(const Sample& sample, const GmmModel& model);

// Weighted Gaussian kernel density at x.
double kernel_density(std::span<const double> values, std::span<const double> weights, double x,
                      double bandwidth);

nlohmann::json to_json(const GmmModel& model);

}  // namespace strata
