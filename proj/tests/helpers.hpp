#pragma once

#include <array>
#include <string>
#include <vector>

#include "strata/data_model.hpp"

namespace testing {

// Units from parallel columns, one cluster per unit, single block.
inline strata::Sample make_sample(const std::vector<int>& z, const std::vector<int>& d,
                                  const std::vector<double>& y,
                                  const std::vector<double>& w = {},
                                  const std::vector<std::string>& block = {}) {
  std::vector<strata::UnitRecord> units;
  for (std::size_t i = 0; i < z.size(); ++i) {
    strata::UnitRecord u;
    u.unit_id = "u" + std::to_string(i);
    u.cluster_id = "c" + std::to_string(i);
    if (!block.empty()) u.block_id = block[i];
    u.z = z[i];
    u.d = d[i];
    u.y = y[i];
    if (!w.empty()) u.weight = w[i];
    units.push_back(std::move(u));
  }
  return strata::Sample("test", std::move(units));
}

// Sample with given take-up counts per arm; outcomes from `y_of(z, d, k)`.
template <class F>
strata::Sample from_counts(const std::array<int, 3>& control, const std::array<int, 3>& treated,
                           F y_of) {
  std::vector<int> z, d;
  std::vector<double> y;
  for (int arm = 0; arm < 2; ++arm) {
    const auto& counts = arm == 0 ? control : treated;
    for (int dd = 0; dd < 3; ++dd) {
      for (int k = 0; k < counts[dd]; ++k) {
        z.push_back(arm);
        d.push_back(dd);
        y.push_back(y_of(arm, dd, k));
      }
    }
  }
  return make_sample(z, d, y);
}

}  // namespace testing
