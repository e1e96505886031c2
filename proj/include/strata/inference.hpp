#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "strata/bounds.hpp"
#include "strata/data_model.hpp"

namespace strata {

enum class ResampleUnit { cluster, unit };
enum class CiMethod { percentile, normal };

std::string_view to_string(ResampleUnit u);
std::string_view to_string(CiMethod m);
ResampleUnit parse_resample_unit(std::string_view name);
CiMethod parse_ci_method(std::string_view name);

struct BootstrapSpec {
  std::size_t reps = 2000;
  std::uint64_t seed = 1;
  double alpha = 0.05;
  ResampleUnit resample_unit = ResampleUnit::cluster;
  CiMethod ci_method = CiMethod::percentile;
  // 0: STRATA_BOUNDS_THREADS if set, else hardware concurrency.
  std::size_t threads = 0;
  // Share of failed replicates above which a statistic is rejected.
  double max_failure_fraction = 0.2;

  // Throws InvalidSpec.
  void validate() const;
};

// Worker count after applying STRATA_BOUNDS_THREADS to a request of 0.
std::size_t resolve_threads(std::size_t requested);

// Runs body(i) for i in [0, n) on up to `threads` workers. The first
// exception thrown by any call is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body);

// Clusters (or units) of every block, for repeated resampling.
class Resampler {
 public:
  Resampler(const Sample& sample, ResampleUnit unit);
  // Draws, within each block, as many clusters as the block holds, with
  // replacement. Propensities are re-derived by the new sample; a draw that
  // leaves a block without one arm raises EmptyCell.
  Sample draw(std::mt19937_64& rng) const;

 private:
  const Sample* sample_;
  std::vector<std::vector<std::uint32_t>> block_clusters_;
  std::vector<std::vector<std::uint32_t>> cluster_rows_;
  std::vector<std::uint32_t> cluster_key_;
};

Sample resample(const Sample& sample, ResampleUnit unit, std::mt19937_64& rng);

// Registered scalar statistics.
std::vector<std::string> statistic_names();
bool is_statistic(std::string_view name);

// Evaluates named statistics on one sample; a statistic whose estimator
// raises an Error is NaN.
std::vector<double> compute_statistics(const Sample& sample, const std::vector<std::string>& names,
                                       const BoundsOptions& opts = {});

struct BootstrapResult {
  std::vector<std::string> names;
  std::vector<double> point;
  // replicates[s][r], NaN where replicate r failed for statistic s.
  std::vector<std::vector<double>> replicates;
  std::vector<EstimateReport> reports;
  // Statistics whose failure rate exceeded the limit; their CI is empty.
  std::vector<std::optional<std::string>> errors;
};

// Bootstraps several statistics from the same replicate draws. With
// `strict`, a statistic failing too often raises TooManyFailures.
BootstrapResult bootstrap(const Sample& sample, const std::vector<std::string>& names,
                          const BootstrapSpec& spec, const BoundsOptions& opts = {},
                          bool strict = true);

EstimateReport bootstrap_ci(const Sample& sample, std::string_view statistic,
                            const BootstrapSpec& spec, const BoundsOptions& opts = {},
                            std::vector<double>* replicates = nullptr);

// Percentile (type 7) and normal-approximation intervals.
std::pair<double, double> percentile_interval(std::vector<double> values, double alpha);
std::pair<double, double> normal_interval(double point, double se, double alpha);
double replicate_sd(const std::vector<double>& values);

}  // namespace strata
