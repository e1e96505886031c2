#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"
#include "strata/data_model.hpp"

namespace strata {

struct EstimatorOptions {
  // Denominator floors for pi(0,2), pi(1,2) and the first stage.
  double share_floor = 0.01;
  double first_stage_floor = 0.01;
  // Raw shares below -tolerance raise the monotonicity diagnostic.
  double monotonicity_tolerance = 0.02;
  // Downstream estimators use clamped shares unless this is false.
  bool use_clamped_shares = true;
};

struct ShareVector {
  double pi_00 = 0.0;  // never takers
  double pi_11 = 0.0;  // alternative adherents
  double pi_22 = 0.0;  // always takers
  double pi_02 = 0.0;  // compliers
  double pi_12 = 0.0;  // substitutors

  double sum() const { return pi_00 + pi_11 + pi_22 + pi_02 + pi_12; }
  double min() const;
  std::array<double, 5> as_array() const { return {pi_00, pi_11, pi_22, pi_02, pi_12}; }
};

struct StrataShares : ShareVector {
  ShareVector raw;
  bool clamped = false;
  bool monotonicity_warning = false;
  std::vector<std::string> diagnostics;
};

// IPW-weighted take-up and outcome sums per (z, d) cell.
struct CellMeans {
  // Outcome sums are taken around this value (the first outcome), so a
  // constant outcome gives exactly zero sums.
  double shift = 0.0;
  std::array<double, 2> arm_weight{};
  std::array<double, 2> arm_ysum{};
  std::array<std::array<double, 3>, 2> cell_weight{};
  std::array<std::array<double, 3>, 2> cell_ysum{};
  std::array<std::array<std::size_t, 3>, 2> cell_count{};

  // P(D = d | Z = z).
  double take_up(int z, int d) const { return cell_weight[z][d] / arm_weight[z]; }
  // E[Y | Z = z, D = d]; throws EmptyCell for an empty cell.
  double mean(int z, int d) const;
  double arm_mean(int z) const { return shift + arm_ysum[z] / arm_weight[z]; }
  bool has(int z, int d) const { return cell_count[z][d] > 0; }
};

CellMeans cell_means(const Sample& sample);

StrataShares shares_from_cells(const CellMeans& cells, const EstimatorOptions& opts = {});
StrataShares estimate_shares(const Sample& sample, const EstimatorOptions& opts = {});

// The shares a downstream estimator should consume under `opts`.
ShareVector shares_for_use(const StrataShares& shares, const EstimatorOptions& opts);

EstimateReport estimate_itt(const Sample& sample);
EstimateReport estimate_control_mean(const Sample& sample);
EstimateReport estimate_first_stage(const Sample& sample);
EstimateReport estimate_late(const Sample& sample, const EstimatorOptions& opts = {});
// E[Y(0) | complier].
EstimateReport estimate_mu0(const Sample& sample, const EstimatorOptions& opts = {});
// E[Y(1) | substitutor].
EstimateReport estimate_mu1(const Sample& sample, const EstimatorOptions& opts = {});

// Cell-level versions used by the bounds and inference code.
double itt_from_cells(const CellMeans& cells);
double first_stage_from_cells(const CellMeans& cells);
double late_from_cells(const CellMeans& cells, const EstimatorOptions& opts = {});
double mu0_from_cells(const CellMeans& cells, const ShareVector& shares,
                      const EstimatorOptions& opts = {});
double mu1_from_cells(const CellMeans& cells, const ShareVector& shares,
                      const EstimatorOptions& opts = {});

// Cluster-robust linearization standard error for the ITT, treating block
// propensities as known.
double itt_cluster_robust_se(const Sample& sample);

nlohmann::json to_json(const StrataShares& shares);

}  // namespace strata
