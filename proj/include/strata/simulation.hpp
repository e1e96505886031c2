#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "strata/data_model.hpp"
#include "strata/strata_estimators.hpp"

namespace strata {

// Order used by every per-stratum array below.
enum class Stratum : std::uint8_t {
  never_taker = 0,   // (0,0)
  adherent = 1,      // (1,1)
  always_taker = 2,  // (2,2)
  complier = 3,      // (0,2)
  substitutor = 4,   // (1,2)
};

inline constexpr std::size_t kStrataCount = 5;

std::string_view to_string(Stratum s);
// Take-up of a stratum under assignment z.
int take_up(Stratum s, int z);

enum class OutcomeFamily { normal, uniform, two_point };

std::string_view to_string(OutcomeFamily f);
OutcomeFamily parse_family(std::string_view name);

struct DgpConfig {
  std::array<double, kStrataCount> strata_probs{0.0, 0.0, 0.0, 1.0, 0.0};
  // outcome_means[stratum][d] = E[Y(d) | stratum].
  std::array<std::array<double, 3>, kStrataCount> outcome_means{};
  double outcome_noise = 1.0;
  OutcomeFamily family = OutcomeFamily::normal;
  std::size_t cluster_count = 100;
  std::size_t cluster_size = 10;
  double icc = 0.0;
  double assign_prob = 0.5;
  // Clusters are dealt to blocks round-robin. A per-block probability list,
  // when given, overrides assign_prob.
  std::size_t blocks = 1;
  std::vector<double> block_assign_prob;
  // Adds a lognormal "distance" covariate with this median when > 0.
  double distance_median = 0.0;
  std::uint64_t seed = 1;

  std::size_t unit_count() const { return cluster_count * cluster_size; }
  // Throws InvalidConfig.
  void validate() const;
};

nlohmann::json to_json(const DgpConfig& config);
DgpConfig dgp_from_json(const nlohmann::json& j);

// Calibrated configurations: "table7-t1", "table7-t2".
DgpConfig preset(std::string_view name);
std::vector<std::string> preset_names();

struct BoundsTruth {
  std::pair<double, double> complier_outcome{0.0, 0.0};
  std::pair<double, double> complier_effect{0.0, 0.0};
  std::pair<double, double> substitutor_effect{0.0, 0.0};
  double c1 = 0.0;
  double c2 = 0.0;
};

struct Truth {
  ShareVector shares;
  double tau_02 = 0.0;
  double tau_12 = 0.0;
  double late = 0.0;
  double itt = 0.0;
  double mu0 = 0.0;  // E[Y(0) | complier]
  double mu1 = 0.0;  // E[Y(1) | substitutor]
  double complier_outcome_mean = 0.0;  // E[Y(2) | complier]
  BoundsTruth bounds;
};

nlohmann::json to_json(const Truth& truth);

struct SyntheticPopulation {
  DgpConfig config;
  Sample sample;
  std::vector<Stratum> strata;
  // potential[i][d] = Y_i(d).
  std::vector<std::array<double, 3>> potential;
  // From the drawn units.
  Truth finite;
  // From the configuration.
  Truth super;
};

SyntheticPopulation generate(const DgpConfig& config);

// Truth computed from drawn strata and potential outcomes. The bounds are
// the trimming bounds of the realized complier+substitutor Y(2) values.
Truth finite_population_truth(std::span<const Stratum> strata,
                              std::span<const std::array<double, 3>> potential,
                              std::span<const double> weights);

// Population-sharp bounds from the configuration's true distributions.
// Non-normal families with icc > 0 raise UnsupportedFamily.
BoundsTruth analytic_bounds(const DgpConfig& config);
Truth super_population_truth(const DgpConfig& config);

// Small exact instances: both arms hold the same stratum counts and the
// always takers have the same outcomes in both arms, so estimated shares
// and the mixture are exact.
struct SmallInstanceSpec {
  std::size_t max_treated_program = 12;
  // Outcomes are drawn from {0, ..., levels - 1}; 0 draws continuous values.
  int integer_levels = 0;
};

SyntheticPopulation small_instance(std::mt19937_64& rng, const SmallInstanceSpec& spec = {});

// Extremes of the complier mean of Y(2) over every complier labeling of
// the treated program-taker outcomes whose complement can hold the
// always-taker outcomes (plus any substitutors). Cells above 20 raise
// TooLarge.
std::pair<double, double> brute_force_complier_mean(std::span<const double> treated_program,
                                                    std::span<const double> always_takers,
                                                    std::size_t compliers);

// Brute force over a small population with equal arm sizes and unit
// weights; returns extremes of E[Y(2) | complier].
std::pair<double, double> brute_force_sharpness(const SyntheticPopulation& population);

}  // namespace strata
