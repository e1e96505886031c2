#include "strata/strata_estimators.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace strata {

double ShareVector::min() const {
  auto a = as_array();
  return *std::min_element(a.begin(), a.end());
}

double CellMeans::mean(int z, int d) const {
  if (cell_count[z][d] == 0) {
    throw Error(ErrorKind::EmptyCell, "no units with z=" + std::to_string(z) +
                                          ", d=" + std::to_string(d));
  }
  return shift + cell_ysum[z][d] / cell_weight[z][d];
}

CellMeans cell_means(const Sample& sample) {
  CellMeans c;
  const auto z = sample.z();
  const auto d = sample.d();
  const auto y = sample.y();
  const auto a = sample.ipw_weight();
  if (!y.empty()) c.shift = y[0];
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double dy = y[i] - c.shift;
    c.arm_weight[z[i]] += a[i];
    c.arm_ysum[z[i]] += a[i] * dy;
    c.cell_weight[z[i]][d[i]] += a[i];
    c.cell_ysum[z[i]][d[i]] += a[i] * dy;
    ++c.cell_count[z[i]][d[i]];
  }
  return c;
}

StrataShares shares_from_cells(const CellMeans& cells, const EstimatorOptions& opts) {
  StrataShares s;
  ShareVector& raw = s.raw;
  raw.pi_12 = cells.take_up(0, 1) - cells.take_up(1, 1);
  raw.pi_22 = cells.take_up(0, 2);
  raw.pi_00 = cells.take_up(1, 0);
  raw.pi_02 = cells.take_up(0, 0) - cells.take_up(1, 0);
  raw.pi_11 = 1.0 - raw.pi_12 - raw.pi_22 - raw.pi_00 - raw.pi_02;

  static_cast<ShareVector&>(s) = raw;
  if (raw.min() < 0.0) {
    s.clamped = true;
    auto clamp = [](double v) { return std::max(v, 0.0); };
    s.pi_00 = clamp(raw.pi_00);
    s.pi_11 = clamp(raw.pi_11);
    s.pi_22 = clamp(raw.pi_22);
    s.pi_02 = clamp(raw.pi_02);
    s.pi_12 = clamp(raw.pi_12);
    const double total = s.sum();
    s.pi_00 /= total;
    s.pi_11 /= total;
    s.pi_22 /= total;
    s.pi_02 /= total;
    s.pi_12 /= total;
  }
  const char* names[] = {"pi_00", "pi_11", "pi_22", "pi_02", "pi_12"};
  const auto values = raw.as_array();
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (values[k] < -opts.monotonicity_tolerance) {
      s.monotonicity_warning = true;
      std::ostringstream msg;
      msg << "MonotonicityDiagnostic: raw " << names[k] << " = " << values[k]
          << " is below -" << opts.monotonicity_tolerance;
      s.diagnostics.push_back(msg.str());
    }
  }
  return s;
}

StrataShares estimate_shares(const Sample& sample, const EstimatorOptions& opts) {
  return shares_from_cells(cell_means(sample), opts);
}

ShareVector shares_for_use(const StrataShares& shares, const EstimatorOptions& opts) {
  return opts.use_clamped_shares ? static_cast<const ShareVector&>(shares) : shares.raw;
}

double itt_from_cells(const CellMeans& cells) {
  return cells.arm_mean(1) - cells.arm_mean(0);
}

double first_stage_from_cells(const CellMeans& cells) {
  return cells.take_up(1, 2) - cells.take_up(0, 2);
}

double late_from_cells(const CellMeans& cells, const EstimatorOptions& opts) {
  const double fs = first_stage_from_cells(cells);
  if (!(fs > opts.first_stage_floor)) {
    std::ostringstream msg;
    msg << "first stage " << fs << " is not above the floor " << opts.first_stage_floor;
    throw Error(ErrorKind::WeakFirstStage, msg.str());
  }
  return itt_from_cells(cells) / fs;
}

namespace {

// E[Y(d0) | S = (d0, 2)] for d0 in {0, 1}: the control-arm mean of cell d0
// with the stayers' treated-arm mean partialled out.
double baseline_mean(const CellMeans& cells, int d0, double stayers, double movers,
                     double floor, const char* share_name) {
  if (!(movers > floor)) {
    std::ostringstream msg;
    msg << share_name << " = " << movers << " is not above the floor " << floor;
    throw Error(ErrorKind::WeakShare, msg.str());
  }
  const double control = cells.mean(0, d0);
  if (stayers == 0.0) return control;
  const double treated = cells.mean(1, d0);
  return (stayers + movers) / movers * control - stayers / movers * treated;
}

EstimateReport point_report(std::string name, double value) {
  EstimateReport r;
  r.name = std::move(name);
  r.point = value;
  return r;
}

}  // namespace

double mu0_from_cells(const CellMeans& cells, const ShareVector& shares,
                      const EstimatorOptions& opts) {
  return baseline_mean(cells, kNoTakeUp, shares.pi_00, shares.pi_02, opts.share_floor,
                       "pi_02");
}

double mu1_from_cells(const CellMeans& cells, const ShareVector& shares,
                      const EstimatorOptions& opts) {
  return baseline_mean(cells, kAlternative, shares.pi_11, shares.pi_12, opts.share_floor,
                       "pi_12");
}

EstimateReport estimate_itt(const Sample& sample) {
  return point_report("itt", itt_from_cells(cell_means(sample)));
}

EstimateReport estimate_control_mean(const Sample& sample) {
  return point_report("control_mean", cell_means(sample).arm_mean(0));
}

EstimateReport estimate_first_stage(const Sample& sample) {
  return point_report("first_stage", first_stage_from_cells(cell_means(sample)));
}

EstimateReport estimate_late(const Sample& sample, const EstimatorOptions& opts) {
  return point_report("late", late_from_cells(cell_means(sample), opts));
}

EstimateReport estimate_mu0(const Sample& sample, const EstimatorOptions& opts) {
  const CellMeans cells = cell_means(sample);
  const ShareVector shares = shares_for_use(shares_from_cells(cells, opts), opts);
  return point_report("mu0", mu0_from_cells(cells, shares, opts));
}

EstimateReport estimate_mu1(const Sample& sample, const EstimatorOptions& opts) {
  const CellMeans cells = cell_means(sample);
  const ShareVector shares = shares_for_use(shares_from_cells(cells, opts), opts);
  return point_report("mu1", mu1_from_cells(cells, shares, opts));
}

double itt_cluster_robust_se(const Sample& sample) {
  const CellMeans cells = cell_means(sample);
  const double m1 = cells.arm_mean(1);
  const double m0 = cells.arm_mean(0);
  std::vector<double> score(sample.cluster_count(), 0.0);
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double a = sample.ipw_weight()[i];
    const double y = sample.y()[i];
    const double psi = sample.z()[i] == 1 ? a * (y - m1) / cells.arm_weight[1]
                                          : -a * (y - m0) / cells.arm_weight[0];
    score[sample.cluster_index()[i]] += psi;
  }
  const double g = static_cast<double>(score.size());
  if (g < 2) return 0.0;
  double ss = 0.0;
  for (double s : score) ss += s * s;
  return std::sqrt(g / (g - 1.0) * ss);
}

nlohmann::json to_json(const StrataShares& s) {
  auto vec = [](const ShareVector& v) {
    return nlohmann::json{{"pi_00", v.pi_00}, {"pi_11", v.pi_11}, {"pi_22", v.pi_22},
                          {"pi_02", v.pi_02}, {"pi_12", v.pi_12}};
  };
  nlohmann::json j = vec(s);
  j["raw"] = vec(s.raw);
  j["clamped"] = s.clamped;
  j["monotonicity_warning"] = s.monotonicity_warning;
  j["diagnostics"] = s.diagnostics;
  return j;
}

}  // namespace strata
