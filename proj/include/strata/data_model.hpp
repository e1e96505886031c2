#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "strata/error.hpp"

namespace strata {

// Take-up codes: 0 = neither option, 1 = existing alternative,
// 2 = introduced program.
inline constexpr int kNoTakeUp = 0;
inline constexpr int kAlternative = 1;
inline constexpr int kProgram = 2;

inline constexpr std::string_view kDefaultBlock = "_all";

struct UnitRecord {
  std::string unit_id;
  std::string cluster_id;
  std::string block_id{kDefaultBlock};
  int z = 0;
  int d = 0;
  double y = 0.0;
  double weight = 1.0;
  std::map<std::string, double> aux;
};

// Validated, immutable experimental sample stored column-wise.
//
// Every block holds at least one treated and one control unit. Each unit
// carries an inverse-propensity weight: its composed weight divided by the
// block's treated (or control) weight share.
class Sample {
 public:
  Sample(std::string label, std::vector<UnitRecord> units);

  const std::string& label() const { return label_; }
  std::size_t size() const { return z_.size(); }
  bool empty() const { return z_.empty(); }

  std::span<const std::uint8_t> z() const { return z_; }
  std::span<const std::uint8_t> d() const { return d_; }
  std::span<const double> y() const { return y_; }
  std::span<const double> weight() const { return weight_; }
  std::span<const double> ipw_weight() const { return ipw_; }
  std::span<const std::uint32_t> block_index() const { return block_; }
  std::span<const std::uint32_t> cluster_index() const { return cluster_; }

  std::size_t block_count() const { return meta_->block_names.size(); }
  const std::string& block_name(std::size_t b) const {
    return meta_->block_names[b];
  }
  std::size_t cluster_count() const { return cluster_origin_.size(); }

  // Treated weight share of a block, strictly inside (0, 1).
  double block_propensity(std::size_t b) const { return propensity_[b]; }
  double propensity(std::string_view block_id) const;

  UnitRecord unit(std::size_t i) const;
  std::vector<UnitRecord> units() const;

  std::vector<std::string> aux_names() const;
  // Value of a named covariate for unit i, nullopt if absent.
  std::optional<double> aux(std::size_t i, std::string_view name) const;

  // Same units with replaced composed weights (all must be > 0).
  Sample with_weights(std::vector<double> weights) const;
  // Rows drawn from this sample. `cluster_of_row` gives each new row's
  // cluster index in the result; duplicated clusters become distinct.
  Sample gather(std::span<const std::uint32_t> rows,
                std::span<const std::uint32_t> cluster_of_row,
                std::span<const std::uint32_t> cluster_origin) const;
  Sample keep(std::span<const std::uint32_t> rows) const;
  Sample relabel(std::string label) const;

 private:
  struct Meta {
    std::vector<std::string> unit_ids;
    std::vector<std::string> cluster_names;
    std::vector<std::string> block_names;
    std::map<std::string, std::vector<double>, std::less<>> aux;
  };

  Sample() = default;
  void finalize();

  std::string label_;
  std::shared_ptr<const Meta> meta_;
  std::vector<std::uint32_t> source_row_;
  std::vector<std::uint8_t> z_;
  std::vector<std::uint8_t> d_;
  std::vector<double> y_;
  std::vector<double> weight_;
  std::vector<double> ipw_;
  std::vector<std::uint32_t> block_;
  std::vector<std::uint32_t> cluster_;
  // Original cluster index for each cluster of this sample, plus draw count.
  std::vector<std::uint32_t> cluster_origin_;
  std::vector<std::uint32_t> cluster_draw_;
  std::vector<double> propensity_;
};

enum class EstimateMethod { analytic, cluster_bootstrap };

struct EstimateReport {
  std::string name;
  double point = 0.0;
  std::optional<double> se;
  std::optional<std::pair<double, double>> ci;
  EstimateMethod method = EstimateMethod::analytic;
  nlohmann::json meta = nlohmann::json::object();
};

std::string_view to_string(EstimateMethod method);
nlohmann::json to_json(const EstimateReport& report);

struct CsvSchema {
  std::string z = "z";
  std::string d = "d";
  std::string y = "y";
  std::string unit_id = "unit_id";
  // Missing cluster column: every row is its own cluster.
  std::string cluster = "cluster";
  // Missing block column: one implicit block "_all".
  std::string block = "block";
  // Missing weight column: unit weights.
  std::string weight = "weight";
  // Covariate name -> column name.
  std::vector<std::pair<std::string, std::string>> aux;
  // When true, every header column not mapped above is read as an aux
  // covariate under its own name.
  bool aux_from_unmapped = false;
};

Sample ingest_csv(const std::string& path, const CsvSchema& schema = {},
                  std::string label = {});
Sample parse_csv(std::string_view text, const CsvSchema& schema = {},
                 std::string label = {});

// Writes unit_id,cluster,block,z,d,y,weight followed by aux columns.
// Reals use 17 significant digits so values survive a round trip.
std::string to_csv(const Sample& sample);
void write_csv(const Sample& sample, const std::string& path);

double propensity(const Sample& sample, std::string_view block_id);

}  // namespace strata
