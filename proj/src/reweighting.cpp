#include "strata/reweighting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace strata {

namespace {

double covariate_of(const Sample& s, std::size_t i, const std::string& name) {
  auto v = s.aux(i, name);
  if (!v) {
    throw Error(ErrorKind::MalformedRow,
                "unit " + std::to_string(i + 1) + " in sample '" + s.label() +
                    "' lacks covariate '" + name + "'",
                i + 1);
  }
  return *v;
}

std::vector<double> masses(const Sample& s, const DensityRatioModel& model) {
  std::vector<double> mass(model.bin_count(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double w = s.weight()[i];
    mass[model.bin_of(covariate_of(s, i, model.covariate))] += w;
    total += w;
  }
  for (double& m : mass) m /= total;
  return mass;
}

}  // namespace

std::size_t DensityRatioModel::bin_of(double x) const {
  if (!(x >= bin_edges.front()) || !(x <= bin_edges.back())) {
    throw Error(ErrorKind::OutOfRange,
                "covariate value " + std::to_string(x) + " outside bin range [" +
                    std::to_string(bin_edges.front()) + ", " +
                    std::to_string(bin_edges.back()) + "]");
  }
  auto it = std::upper_bound(bin_edges.begin(), bin_edges.end(), x);
  std::size_t b = static_cast<std::size_t>(it - bin_edges.begin());
  b = b == 0 ? 0 : b - 1;
  return std::min(b, bin_count() - 1);
}

DensityRatioModel fit_density_ratio(const Sample& source, const Sample& target,
                                    const std::string& covariate, const BinSpec& bins) {
  DensityRatioModel model;
  model.covariate = covariate;
  if (const auto* edges = std::get_if<std::vector<double>>(&bins.bins)) {
    if (edges->size() < 2) {
      throw Error(ErrorKind::InvalidConfig, "need at least two bin edges");
    }
    for (std::size_t k = 1; k < edges->size(); ++k) {
      if (!((*edges)[k] > (*edges)[k - 1])) {
        throw Error(ErrorKind::InvalidConfig, "bin edges must be strictly increasing");
      }
    }
    model.bin_edges = *edges;
  } else {
    const std::size_t count = std::get<std::size_t>(bins.bins);
    if (count == 0) throw Error(ErrorKind::InvalidConfig, "bin count must be positive");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const Sample* s : {&source, &target}) {
      for (std::size_t i = 0; i < s->size(); ++i) {
        const double x = covariate_of(*s, i, covariate);
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    }
    if (hi == lo) hi = lo + 1.0;
    model.bin_edges.resize(count + 1);
    for (std::size_t k = 0; k <= count; ++k) {
      model.bin_edges[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count);
    }
    model.bin_edges.back() = hi;
  }
  const std::size_t nbins = model.bin_edges.size() - 1;
  model.ratio.assign(nbins, 0.0);
  model.source_density = masses(source, model);
  model.target_density = masses(target, model);
  for (std::size_t b = 0; b < nbins; ++b) {
    const double s = model.source_density[b];
    const double t = model.target_density[b];
    if (t == 0.0) {
      model.ratio[b] = 0.0;
    } else if (s == 0.0) {
      throw Error(ErrorKind::UnsupportedShift,
                  "target has mass in bin [" + std::to_string(model.bin_edges[b]) + ", " +
                      std::to_string(model.bin_edges[b + 1]) +
                      ") where the source has none");
    } else {
      model.ratio[b] = t / s;
    }
  }
  return model;
}

Sample apply_weights(const Sample& sample, const DensityRatioModel& model) {
  std::vector<std::uint32_t> kept;
  std::vector<double> raw;
  double before = 0.0;
  double after = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double w = sample.weight()[i];
    before += w;
    const double r = model.ratio[model.bin_of(covariate_of(sample, i, model.covariate))];
    if (r > 0.0) {
      kept.push_back(static_cast<std::uint32_t>(i));
      raw.push_back(w * r);
      after += w * r;
    }
  }
  if (kept.empty()) {
    throw Error(ErrorKind::UnsupportedShift, "reweighting leaves no units with positive weight");
  }
  const double scale = before / after;
  for (double& w : raw) w *= scale;
  if (kept.size() == sample.size()) return sample.with_weights(std::move(raw));
  return sample.keep(kept).with_weights(std::move(raw));
}

std::vector<double> weighted_bin_masses(const Sample& sample, const DensityRatioModel& model) {
  return masses(sample, model);
}

nlohmann::json to_json(const DensityRatioModel& model) {
  return {
      {"schema_version", 1},
      {"covariate", model.covariate},
      {"bin_edges", model.bin_edges},
      {"source_density", model.source_density},
      {"target_density", model.target_density},
      {"ratio", model.ratio},
      {"normalization", "global: reweighted total weight equals original total"},
  };
}

}  // namespace strata
