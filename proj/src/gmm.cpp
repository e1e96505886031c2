#include "strata/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <vector>

#include "strata/inference.hpp"
#include "strata/step_distribution.hpp"

namespace strata {

std::string_view to_string(GmmTarget t) {
  switch (t) {
    case GmmTarget::tauL_02: return "tauL_02";
    case GmmTarget::tauU_02: return "tauU_02";
    case GmmTarget::tauL_12: return "tauL_12";
    case GmmTarget::tauU_12: return "tauU_12";
  }
  return "tauL_02";
}

GmmTarget parse_gmm_target(std::string_view name) {
  if (name == "tauL_02") return GmmTarget::tauL_02;
  if (name == "tauU_02") return GmmTarget::tauU_02;
  if (name == "tauL_12") return GmmTarget::tauL_12;
  if (name == "tauU_12") return GmmTarget::tauU_12;
  throw Error(ErrorKind::InvalidSpec, "unknown variance target '" + std::string(name) + "'");
}

double GmmModel::tail_weight(double y) const {
  const double c = eta[kCut];
  if (y == c) return tie_fraction;
  return tail > 0 ? (y < c ? 1.0 : 0.0) : (y > c ? 1.0 : 0.0);
}

namespace {

struct Roles {
  double pi_f;     // focal mover share
  double pi_stay;  // stayers with the focal baseline take-up
  int f_index;
  int stay_index;
};

Roles roles(const GmmModel& m) {
  const Vector11& e = m.eta;
  if (m.focal_d0 == 0) return {e[kPi02], e[kPi00], kPi02, kPi00};
  return {e[kPi12], e[kKappa3], kPi12, kKappa3};
}

double a3_of(const Vector11& e) { return e[kPi02] + e[kPi12] + e[kPi22]; }

}  // namespace

Vector11 moment_conditions(int z, int d, double y, const GmmModel& m) {
  const Vector11& e = m.eta;
  const Roles r = roles(m);
  const double a3 = a3_of(e);
  const double t = m.tail_weight(y);
  const double Z = z == 1 ? 1.0 : 0.0;
  const double prog = d == kProgram ? 1.0 : 0.0;
  const double base = d == m.focal_d0 ? 1.0 : 0.0;
  Vector11 g;
  g[0] = Z * prog * (t * y - e[kMuT1]);
  g[1] = (1 - Z) * prog * (t * y - e[kMuT0]);
  g[2] = (1 - Z) * prog * (e[kKappa1] - t);
  g[3] = Z * prog * (e[kPi22] * e[kKappa1] + r.pi_f - a3 * t);
  g[4] = (1 - Z) * base * ((r.pi_f + r.pi_stay) * y - r.pi_f * e[kMuBase] - r.pi_stay * e[kKappa2]);
  g[5] = Z * base * (y - e[kKappa2]);
  g[6] = Z * (e[kPi00] - (d == kNoTakeUp ? 1.0 : 0.0));
  g[7] = (1 - Z) * (e[kPi22] - prog);
  g[8] = (1 - Z) * (e[kPi00] + e[kPi02] - (d == kNoTakeUp ? 1.0 : 0.0));
  g[9] = (1 - Z) * (e[kPi12] + e[kKappa3] - (d == kAlternative ? 1.0 : 0.0));
  g[10] = Z * (e[kKappa3] - (d == kAlternative ? 1.0 : 0.0));
  return g;
}

Vector11 moment_conditions(const UnitRecord& u, const GmmModel& m) {
  return moment_conditions(u.z, u.d, u.y, m);
}

Vector11 mean_moments(const Sample& sample, const GmmModel& m) {
  Vector11 s = Vector11::Zero();
  double w = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double a = sample.ipw_weight()[i];
    s += a * moment_conditions(sample.z()[i], sample.d()[i], sample.y()[i], m);
    w += a;
  }
  return s / w;
}

Matrix11 empirical_sigma(const Sample& sample, const GmmModel& m) {
  Matrix11 s = Matrix11::Zero();
  double w = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double u = sample.weight()[i];
    const Vector11 g = moment_conditions(sample.z()[i], sample.d()[i], sample.y()[i], m);
    s += u * g * g.transpose();
    w += u;
  }
  return s / w;
}

double kernel_density(std::span<const double> values, std::span<const double> weights, double x,
                      double h) {
  double s = 0.0, w = 0.0;
  const double norm = 1.0 / (h * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double u = (x - values[i]) / h;
    s += weights[i] * norm * std::exp(-0.5 * u * u);
    w += weights[i];
  }
  return w > 0.0 ? s / w : 0.0;
}

namespace {

// IPW-weighted outcomes of one (z, d) cell.
struct Cell {
  std::vector<double> y, a;
  double weight = 0.0;

  bool empty() const { return y.empty(); }
  double mean() const {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += a[i] * y[i];
    return s / weight;
  }
  double variance() const {
    const double m = mean();
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += a[i] * (y[i] - m) * (y[i] - m);
    return s / weight;
  }
  // E[t^p Y^q] over the cell.
  double tail_moment(const GmmModel& model, int p, int q) const {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      s += a[i] * std::pow(model.tail_weight(y[i]), p) * std::pow(y[i], q);
    }
    return s / weight;
  }
};

// Chooses c and the tie fraction so that
//   a3 * E_21[t] - pi22 * E_20[t] = pi_f
// holds exactly, t being the (fractional) tail indicator.
void locate_cut(GmmModel& m, const Cell& treated, const Cell& control, double a3, double pi22,
                double pi_f) {
  std::vector<double> ys(treated.y);
  ys.insert(ys.end(), control.y.begin(), control.y.end());
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());

  // Net atom mass a3 * m21(y) - pi22 * m20(y) at each support point.
  const auto dt = treated.empty() ? StepDistribution{} : StepDistribution::from_points(treated.y, treated.a);
  const auto dc = control.empty() ? StepDistribution{} : StepDistribution::from_points(control.y, control.a);
  std::vector<double> net(ys.size(), 0.0);
  for (std::size_t k = 0, i = 0, j = 0; k < ys.size(); ++k) {
    if (i < dt.support.size() && dt.support[i] == ys[k]) net[k] += a3 * dt.mass[i++];
    if (j < dc.support.size() && dc.support[j] == ys[k]) net[k] -= pi22 * dc.mass[j++];
  }
  const std::size_t n = ys.size();
  double before = 0.0;
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t k = m.tail > 0 ? step : n - 1 - step;
    const double after = before + net[k];
    if (after >= pi_f - kLevelTolerance || step + 1 == n) {
      m.eta[kCut] = ys[k];
      m.tie_fraction = net[k] > 0.0 ? std::clamp((pi_f - before) / net[k], 0.0, 1.0) : 1.0;
      return;
    }
    before = after;
  }
}

}  // namespace

GmmModel fit_gmm(const Sample& sample, GmmTarget target, const GmmOptions& opts) {
  GmmModel m;
  m.target = target;
  m.focal_d0 = (target == GmmTarget::tauL_02 || target == GmmTarget::tauU_02) ? 0 : 1;
  m.tail = (target == GmmTarget::tauL_02 || target == GmmTarget::tauL_12) ? 1 : -1;

  const CellMeans cm = cell_means(sample);
  const StrataShares shares = shares_from_cells(cm, opts.estimator);
  const ShareVector& raw = shares.raw;
  Vector11& e = m.eta;
  e[kPi00] = raw.pi_00;
  e[kPi02] = raw.pi_02;
  e[kPi12] = raw.pi_12;
  e[kPi22] = raw.pi_22;
  e[kKappa3] = raw.pi_11;
  const Roles r = roles(m);
  if (!(r.pi_f > opts.estimator.share_floor)) {
    std::ostringstream msg;
    msg << (m.focal_d0 == 0 ? "pi_02" : "pi_12") << " = " << r.pi_f
        << " is not above the floor " << opts.estimator.share_floor;
    throw Error(ErrorKind::WeakShare, msg.str());
  }

  Cell cells[2][3];
  double total_w = 0.0, total_w2 = 0.0;
  double design[2][3] = {};
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const int z = sample.z()[i];
    const int d = sample.d()[i];
    Cell& c = cells[z][d];
    c.y.push_back(sample.y()[i]);
    c.a.push_back(sample.ipw_weight()[i]);
    c.weight += sample.ipw_weight()[i];
    const double w = sample.weight()[i];
    design[z][d] += w;
    total_w += w;
    total_w2 += w * w;
  }
  m.n_eff = total_w * total_w / total_w2;
  m.p_z1 = (design[1][0] + design[1][1] + design[1][2]) / total_w;
  m.p_z0 = (design[0][0] + design[0][1] + design[0][2]) / total_w;
  m.p_d2z1 = design[1][2] / total_w;
  m.p_d2z0 = design[0][2] / total_w;
  m.p_base_z1 = design[1][m.focal_d0] / total_w;
  m.p_base_z0 = design[0][m.focal_d0] / total_w;

  const Cell& c21 = cells[1][kProgram];
  const Cell& c20 = cells[0][kProgram];
  const Cell& cb0 = cells[0][m.focal_d0];
  const Cell& cb1 = cells[1][m.focal_d0];
  if (c21.empty()) throw Error(ErrorKind::EmptyCell, "no units with z=1, d=2");
  if (cb0.empty()) {
    throw Error(ErrorKind::EmptyCell, "no units with z=0, d=" + std::to_string(m.focal_d0));
  }
  const double a3 = a3_of(e);
  locate_cut(m, c21, c20, a3, e[kPi22], r.pi_f);

  m.active.fill(true);
  if (c20.empty()) {
    m.active[1] = m.active[2] = false;
  }
  if (cb1.empty()) m.active[5] = false;

  e[kMuT1] = c21.tail_moment(m, 1, 1);
  const double ft1 = c21.tail_moment(m, 1, 0);
  e[kMuT0] = c20.empty() ? 0.0 : c20.tail_moment(m, 1, 1);
  e[kKappa1] = c20.empty() ? 0.0 : c20.tail_moment(m, 1, 0);
  e[kKappa2] = cb1.empty() ? 0.0 : cb1.mean();
  const double m0 = cb0.mean();
  e[kMuBase] = ((r.pi_f + r.pi_stay) * m0 - r.pi_stay * e[kKappa2]) / r.pi_f;

  // Kernel densities at the cut.
  const double c = e[kCut];
  m.h_treated = opts.bandwidth_treated.value_or(silverman_bandwidth(c21.y, c21.a));
  m.f_treated = m.h_treated > 0.0 ? kernel_density(c21.y, c21.a, c, m.h_treated) : 0.0;
  if (!c20.empty()) {
    m.h_control = opts.bandwidth_control.value_or(silverman_bandwidth(c20.y, c20.a));
    m.f_control = m.h_control > 0.0 ? kernel_density(c20.y, c20.a, c, m.h_control) : 0.0;
  }
  const double mixture_density = a3 * m.f_treated - e[kPi22] * m.f_control;
  if (!(m.f_treated >= opts.density_floor) || !(mixture_density >= opts.density_floor)) {
    std::ostringstream msg;
    msg << "density at the cutpoint " << c << " is below " << opts.density_floor
        << " (f_21 = " << m.f_treated << ", mixture = " << mixture_density << ")";
    throw Error(ErrorKind::ZeroDensity, msg.str());
  }

  // Jacobian of the mean moments.
  const double s = m.tail;
  const double P21 = m.p_d2z1, P20 = m.p_d2z0, Pb0 = m.p_base_z0, Pb1 = m.p_base_z1;
  const double a2 = e[kPi22] * e[kKappa1] + r.pi_f;
  Matrix11& H = m.H;
  H.setZero();
  H(0, kMuT1) = -P21;
  H(0, kCut) = s * P21 * c * m.f_treated;
  H(1, kMuT0) = -P20;
  H(1, kCut) = s * P20 * c * m.f_control;
  H(2, kCut) = -s * P20 * m.f_control;
  H(2, kKappa1) = P20;
  H(3, kCut) = -s * P21 * a3 * m.f_treated;
  H(3, kKappa1) = P21 * e[kPi22];
  H(3, kPi02) = P21 * ((r.f_index == kPi02 ? 1.0 : 0.0) - ft1);
  H(3, kPi12) = P21 * ((r.f_index == kPi12 ? 1.0 : 0.0) - ft1);
  H(3, kPi22) = P21 * (e[kKappa1] - ft1);
  H(4, kMuBase) = -Pb0 * r.pi_f;
  H(4, kKappa2) = -Pb0 * r.pi_stay;
  H(4, r.stay_index) = Pb0 * (m0 - e[kKappa2]);
  H(4, r.f_index) = Pb0 * (m0 - e[kMuBase]);
  H(5, kKappa2) = -Pb1;
  H(6, kPi00) = m.p_z1;
  H(7, kPi22) = m.p_z0;
  H(8, kPi00) = m.p_z0;
  H(8, kPi02) = m.p_z0;
  H(9, kPi12) = m.p_z0;
  H(9, kKappa3) = m.p_z0;
  H(10, kKappa3) = m.p_z1;

  // Moment covariance.
  Matrix11& S = m.Sigma;
  S.setZero();
  const double mu1 = e[kMuT1];
  S(0, 0) = P21 * (c21.tail_moment(m, 2, 2) - mu1 * mu1);
  S(0, 3) = S(3, 0) = P21 * a3 * (mu1 * ft1 - c21.tail_moment(m, 2, 1));
  S(3, 3) = P21 * (a3 * a3 * c21.tail_moment(m, 2, 0) - a2 * a2);
  if (!c20.empty()) {
    const double mu0 = e[kMuT0];
    const double k1 = e[kKappa1];
    S(1, 1) = P20 * (c20.tail_moment(m, 2, 2) - mu0 * mu0);
    S(1, 2) = S(2, 1) = P20 * (mu0 * k1 - c20.tail_moment(m, 2, 1));
    S(2, 2) = P20 * (c20.tail_moment(m, 2, 0) - k1 * k1);
  }
  const double a4 = r.pi_f + r.pi_stay;
  S(4, 4) = Pb0 * a4 * a4 * cb0.variance();
  if (!cb1.empty()) S(5, 5) = Pb1 * cb1.variance();

  const double p00 = e[kPi00], p02 = e[kPi02], p12 = e[kPi12], p22 = e[kPi22], k3 = e[kKappa3];
  const double pz1 = m.p_z1, pz0 = m.p_z0;
  S(6, 6) = pz1 * p00 * (1 - p00);
  S(6, 10) = S(10, 6) = -pz1 * p00 * k3;
  S(10, 10) = pz1 * k3 * (1 - k3);
  S(7, 7) = pz0 * p22 * (1 - p22);
  S(7, 8) = S(8, 7) = -pz0 * p22 * (p00 + p02);
  S(7, 9) = S(9, 7) = -pz0 * p22 * (p12 + k3);
  S(8, 8) = pz0 * (p00 + p02) * (1 - p00 - p02);
  S(8, 9) = S(9, 8) = -pz0 * (p00 + p02) * (p12 + k3);
  S(9, 9) = pz0 * (p12 + k3) * (1 - p12 - k3);

  // Reduced system over the active moments and their parameters.
  std::vector<int> rows, cols;
  for (int k = 0; k < kMoments; ++k) {
    if (m.active[k]) rows.push_back(k);
  }
  for (int k = 0; k < kMoments; ++k) {
    const bool dropped = (!m.active[1] && (k == kMuT0 || k == kKappa1)) ||
                         (!m.active[5] && k == kKappa2);
    if (!dropped) cols.push_back(k);
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd Hr(n, n), Sr(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      Hr(i, j) = H(rows[i], cols[j]);
      Sr(i, j) = S(rows[i], rows[j]);
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Hr);
  const auto sv = svd.singularValues();
  m.condition_number = sv[n - 1] > 0.0 ? sv[0] / sv[n - 1] : std::numeric_limits<double>::infinity();
  if (!(m.condition_number <= opts.condition_limit)) {
    std::ostringstream msg;
    msg << "Jacobian condition number " << m.condition_number << " exceeds "
        << opts.condition_limit;
    throw Error(ErrorKind::SingularJacobian, msg.str());
  }
  const Eigen::MatrixXd Hinv = Hr.partialPivLu().inverse();
  Eigen::MatrixXd Vr = Hinv * Sr * Hinv.transpose();
  Vr = (0.5 * (Vr + Vr.transpose())).eval();
  m.V.setZero();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) m.V(cols[i], cols[j]) = Vr(i, j);
  }

  // Delta method for f = (a3 mu_T1 - pi22 mu_T0) / pi_f - mu_b.
  const double num = a3 * e[kMuT1] - p22 * e[kMuT0];
  m.estimate = num / r.pi_f - e[kMuBase];
  Vector11& g = m.gradient;
  g.setZero();
  g[kMuT1] = a3 / r.pi_f;
  g[kMuT0] = -p22 / r.pi_f;
  g[kMuBase] = -1.0;
  for (int j : {kPi02, kPi12, kPi22}) g[j] = e[kMuT1] / r.pi_f;
  g[kPi22] -= e[kMuT0] / r.pi_f;
  g[r.f_index] -= num / (r.pi_f * r.pi_f);
  m.variance = std::max(0.0, static_cast<double>(g.transpose() * m.V * g));
  m.se = std::sqrt(m.variance / m.n_eff);
  return m;
}

EstimateReport asymptotic_variance(const Sample& sample, GmmTarget target, const GmmOptions& opts) {
  const GmmModel m = fit_gmm(sample, target, opts);
  EstimateReport r;
  r.name = std::string(to_string(target));
  r.point = m.estimate;
  r.se = m.se;
  r.ci = normal_interval(m.estimate, m.se, 0.05);
  r.method = EstimateMethod::analytic;
  r.meta = {{"condition_number", m.condition_number},
            {"f_21", m.f_treated},
            {"f_20", m.f_control},
            {"bandwidth_21", m.h_treated},
            {"bandwidth_20", m.h_control},
            {"cutpoint", m.eta[kCut]},
            {"n_eff", m.n_eff}};
  return r;
}

SimplifiedVariance simplified_variance(const Sample& sample, const GmmModel& m) {
  (void)sample;
  SimplifiedVariance v;
  const double P21 = m.p_d2z1, P20 = m.p_d2z0;
  v.var_mu_t1 = m.Sigma(0, 0) / (P21 * P21);
  v.var_mu_t0 = P20 > 0.0 ? m.Sigma(1, 1) / (P20 * P20) : 0.0;
  // Moments (1) and (2) live on disjoint cells.
  v.cov_mu_t1_mu_t0 = 0.0;
  const Roles r = roles(m);
  const double base0 = m.Sigma(4, 4) / (m.p_base_z0 * m.p_base_z0);
  const double base1 = m.p_base_z1 > 0.0 ? m.Sigma(5, 5) / (m.p_base_z1 * m.p_base_z1) : 0.0;
  v.var_baseline = (base0 + r.pi_stay * r.pi_stay * base1) / (r.pi_f * r.pi_f);
  return v;
}

nlohmann::json to_json(const GmmModel& m) {
  static const char* names[] = {"mu_T1", "mu_T0", "mu_base", "c",     "kappa1", "kappa2",
                                "pi_00", "pi_02", "pi_12",   "pi_22", "kappa3"};
  nlohmann::json eta = nlohmann::json::object();
  nlohmann::json var = nlohmann::json::object();
  for (int k = 0; k < kMoments; ++k) {
    eta[names[k]] = m.eta[k];
    var[names[k]] = m.V(k, k);
  }
  auto matrix = [](const Matrix11& a) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < kMoments; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int j = 0; j < kMoments; ++j) row.push_back(a(i, j));
      rows.push_back(row);
    }
    return rows;
  };
  nlohmann::json theta = nlohmann::json::array(), gamma = nlohmann::json::array();
  for (int k = 0; k < kPi00; ++k) theta.push_back(m.eta[k]);
  for (int k = kPi00; k < kMoments; ++k) gamma.push_back(m.eta[k]);
  return {{"target", to_string(m.target)},
          {"estimate", m.estimate},
          {"se", m.se},
          {"variance", m.variance},
          {"n_eff", m.n_eff},
          {"condition_number", m.condition_number},
          {"tie_fraction", m.tie_fraction},
          {"theta", theta},
          {"gamma", gamma},
          {"H", matrix(m.H)},
          {"Sigma", matrix(m.Sigma)},
          {"V", matrix(m.V)},
          {"density_estimates",
           {{"f_21", m.f_treated}, {"f_20", m.f_control}, {"h_21", m.h_treated}, {"h_20", m.h_control}}},
          {"parameters", eta},
          {"variance_diagonal", var}};
}

}  // namespace strata
