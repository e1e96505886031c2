#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "strata/data_model.hpp"

namespace strata {

// Fixed-width bins over the pooled covariate range, or explicit edges.
struct BinSpec {
  std::variant<std::size_t, std::vector<double>> bins = std::size_t{10};
};

// Histogram density-ratio weights for one covariate. Bin b covers
// [edges[b], edges[b+1]); the last bin also includes its upper edge.
struct DensityRatioModel {
  std::string covariate;
  std::vector<double> bin_edges;
  std::vector<double> source_density;
  std::vector<double> target_density;
  std::vector<double> ratio;

  std::size_t bin_count() const { return ratio.size(); }
  // Bin containing x; throws OutOfRange outside the edges.
  std::size_t bin_of(double x) const;
};

DensityRatioModel fit_density_ratio(const Sample& source, const Sample& target,
                                    const std::string& covariate,
                                    const BinSpec& bins = {});

// Multiplies each unit weight by its bin ratio and rescales so the total
// weight is unchanged. Units in bins the target never visits (ratio 0) are
// dropped because a weight must stay positive.
Sample apply_weights(const Sample& sample, const DensityRatioModel& model);

// Per-bin share of total weight for `covariate` in `sample`.
std::vector<double> weighted_bin_masses(const Sample& sample,
                                        const DensityRatioModel& model);

nlohmann::json to_json(const DensityRatioModel& model);

}  // namespace strata
