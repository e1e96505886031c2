#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "strata/data_model.hpp"
#include "strata/step_distribution.hpp"
#include "strata/strata_estimators.hpp"

namespace strata {

enum class Smoothing {
  none,
  // Experimental: Gaussian-kernel smoothed cell CDFs, Silverman bandwidth.
  gaussian_kernel,
};

enum class SubstitutorMethod { decomposition, direct };

struct BoundsOptions {
  EstimatorOptions estimator;
  Smoothing smoothing = Smoothing::none;
  std::size_t smoothing_grid = 1024;
  // |lower - upper| inversions up to this size are swapped with a warning.
  double inversion_tolerance = 1e-9;
  SubstitutorMethod substitutor_method = SubstitutorMethod::decomposition;
  // Report decomposition and direct substitutor intervals intersected.
  bool intersect = false;
};

// Identified outcome distribution of compliers and substitutors under the
// program, as the weighted difference of the two program-taker cell ECDFs.
struct MixtureCdf {
  std::vector<double> support;
  std::vector<double> raw_cdf;
  // Running maximum of raw_cdf, clipped to [0, 1], 1 at the top point.
  std::vector<double> iso_cdf;
  double coef_treated = 1.0;  // (pi02 + pi12 + pi22) / (pi02 + pi12)
  double coef_control = 0.0;  // pi22 / (pi02 + pi12)

  // Point masses implied by iso_cdf.
  std::vector<double> masses() const;
  double mean() const;
  // Largest drop of raw_cdf below its running maximum.
  double max_monotonicity_gap() const;
};

// IPW-weighted outcome distribution of one (z, d) cell; EmptyCell if empty.
StepDistribution cell_distribution(const Sample& sample, int z, int d);

MixtureCdf build_mixture_cdf(const StepDistribution& treated_program,
                             const StepDistribution& control_program,
                             const ShareVector& shares, double floor = 0.0);
MixtureCdf build_mixture_cdf(const Sample& sample, const ShareVector& shares,
                             const BoundsOptions& opts = {});

// Experimental kernel-smoothed mixture evaluated on a regular grid.
MixtureCdf build_smoothed_mixture_cdf(const Sample& sample, const ShareVector& shares,
                                      const BoundsOptions& opts = {});

// Generalized-inverse cutpoints of the isotonized mixture:
//   c1 = inf{y : F(y) >= pi02 / (pi02 + pi12)}
//   c2 = inf{y : F(y) >= pi12 / (pi02 + pi12)}
struct TrimCutpoints {
  double c1 = 0.0;
  double c2 = 0.0;
  double lower_level = 1.0;
  double upper_level = 0.0;
  // Mass of the atom at c1 (c2) retained by the lower (upper) trimmed mean.
  double c1_tie_mass = 0.0;
  double c2_tie_mass = 0.0;
};

TrimCutpoints trim_cutpoints(const MixtureCdf& mixture, const ShareVector& shares);

enum class BoundTarget { complier_outcome_mean, complier_effect, substitutor_effect };

std::string_view to_string(BoundTarget target);

struct EffectBounds {
  BoundTarget target = BoundTarget::complier_outcome_mean;
  double lower = 0.0;
  double upper = 0.0;
  std::optional<std::pair<double, double>> ci_lower;
  std::optional<std::pair<double, double>> ci_upper;
  TrimCutpoints cutpoints;
  ShareVector shares_used;
  std::vector<std::string> diagnostics;

  double width() const { return upper - lower; }
};

EffectBounds complier_outcome_bounds(const Sample& sample, const StrataShares& shares,
                                     const BoundsOptions& opts = {});
EffectBounds complier_effect_bounds(const Sample& sample, const BoundsOptions& opts = {});
EffectBounds substitutor_effect_bounds(const Sample& sample,
                                       SubstitutorMethod method = SubstitutorMethod::decomposition,
                                       const BoundsOptions& opts = {});

// Maps complier effect bounds to substitutor effect bounds through
//   late * (pi02 + pi12) = pi02 * tau02 + pi12 * tau12.
// The complier upper endpoint becomes the substitutor lower endpoint.
std::pair<double, double> substitutor_from_complier(double late, const ShareVector& shares,
                                                    std::pair<double, double> complier);
double substitutor_effect_at(double late, const ShareVector& shares, double complier_effect);

struct LinePoint {
  double substitutor_effect = 0.0;
  double complier_effect = 0.0;
};

// Pairs (tau12, tau02) consistent with the LATE, tau02 spanning its bounds
// from lower to upper. A single point when the bounds coincide.
std::vector<LinePoint> bounds_line(const Sample& sample, std::size_t grid = 101,
                                   const BoundsOptions& opts = {});
std::vector<LinePoint> bounds_line(double late, const ShareVector& shares,
                                   std::pair<double, double> complier_effect,
                                   std::size_t grid = 101);

// Everything the bounds pipeline computes from one sample.
struct BoundsAnalysis {
  CellMeans cells;
  StrataShares shares;
  ShareVector shares_used;
  double itt = 0.0;
  double control_mean = 0.0;
  double first_stage = 0.0;
  double late = 0.0;
  MixtureCdf mixture;
  EffectBounds complier_outcome;
  double mu0 = 0.0;
  EffectBounds complier_effect;
  std::optional<double> mu1;
  EffectBounds substitutor_effect;
  std::optional<EffectBounds> substitutor_direct;
  // Complier effect bounds recomputed with unclamped shares, when clamping
  // changed the shares and the raw shares still admit bounds.
  std::optional<std::pair<double, double>> complier_effect_raw_shares;
};

BoundsAnalysis analyze_bounds(const Sample& sample, const BoundsOptions& opts = {});

nlohmann::json to_json(const EffectBounds& bounds);
nlohmann::json to_json(const MixtureCdf& mixture);

}  // namespace strata
