#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "strata/bounds.hpp"
#include "strata/data_model.hpp"
#include "strata/error.hpp"
#include "strata/strata_estimators.hpp"

using namespace strata;

namespace {

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Io;
}

std::optional<std::size_t> row_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.row();
  }
  return std::nullopt;
}

}  // namespace

TEST_CASE("minimal four row file") {
  const Sample s = parse_csv("z,d,y\n0,0,1.5\n0,1,2\n1,2,3\n1,0,-1\n");
  CHECK(s.size() == 4);
  CHECK(s.block_count() == 1);
  CHECK(s.block_name(0) == "_all");
  CHECK(s.y()[0] == 1.5);
  CHECK(s.d()[2] == 2);
  // No weight column: every weight is 1.
  for (double w : s.weight()) CHECK(w == 1.0);
  // No cluster column: each unit is its own cluster.
  CHECK(s.cluster_count() == 4);
}

TEST_CASE("d out of range reports the data row") {
  std::string text = "z,d,y\n";
  for (int r = 1; r <= 9; ++r) text += std::to_string(r % 2) + "," + (r == 7 ? "3" : "1") + ",0.5\n";
  auto f = [&] { parse_csv(text); };
  CHECK(kind_of(f) == ErrorKind::DomainViolation);
  CHECK(row_of(f) == 7u);
}

TEST_CASE("z out of range") {
  CHECK(kind_of([] { parse_csv("z,d,y\n0,0,1\n2,0,1\n"); }) == ErrorKind::DomainViolation);
}

TEST_CASE("block without controls") {
  CHECK(kind_of([] { parse_csv("z,d,y\n1,0,1\n1,2,1\n1,1,0\n"); }) == ErrorKind::EmptyCell);
  // A second block with both arms does not rescue the first.
  CHECK(kind_of([] {
          parse_csv("z,d,y,block\n1,0,1,a\n1,2,1,a\n0,1,0,b\n1,1,0,b\n");
        }) == ErrorKind::EmptyCell);
}

TEST_CASE("malformed rows") {
  CHECK(kind_of([] { parse_csv("z,d,y\n0,0\n1,0,1\n"); }) == ErrorKind::MalformedRow);
  CHECK(kind_of([] { parse_csv("z,d,y\n0,0,\n1,0,1\n"); }) == ErrorKind::MalformedRow);
  CHECK(kind_of([] { parse_csv("z,d,y\n0,0,abc\n1,0,1\n"); }) == ErrorKind::MalformedRow);
  CHECK(kind_of([] { parse_csv("z,d\n0,0\n1,0\n"); }) == ErrorKind::MalformedRow);
  CHECK(kind_of([] { parse_csv("z,d,y,weight\n0,0,1,0\n1,0,1,1\n"); }) == ErrorKind::DomainViolation);
  CHECK(kind_of([] { ingest_csv("/nonexistent/file.csv"); }) == ErrorKind::Io);
}

TEST_CASE("propensity examples") {
  const Sample a = parse_csv("z,d,y\n1,0,1\n1,0,1\n1,0,1\n0,0,1\n");
  CHECK(propensity(a, "_all") == doctest::Approx(0.75).epsilon(1e-15));

  const Sample b = parse_csv("z,d,y,weight\n1,0,1,2\n0,0,1,2\n");
  CHECK(propensity(b, "_all") == 0.5);

  const Sample c = parse_csv("z,d,y,weight\n1,0,1,0.5\n0,0,1,1.5\n");
  CHECK(propensity(c, "_all") == doctest::Approx(0.25).epsilon(1e-15));

  CHECK(kind_of([&] { propensity(c, "missing"); }) == ErrorKind::EmptyCell);
}

TEST_CASE("ipw weights divide by the block propensity") {
  const Sample s = parse_csv("z,d,y,block\n1,0,1,a\n0,0,1,a\n0,0,1,a\n0,0,1,a\n1,0,1,b\n0,0,1,b\n");
  // Block a: e = 1/4.
  CHECK(s.ipw_weight()[0] == doctest::Approx(4.0));
  CHECK(s.ipw_weight()[1] == doctest::Approx(4.0 / 3.0));
  CHECK(s.ipw_weight()[4] == doctest::Approx(2.0));
  for (std::size_t b = 0; b < s.block_count(); ++b) {
    CHECK(s.block_propensity(b) > 0.0);
    CHECK(s.block_propensity(b) < 1.0);
  }
}

TEST_CASE("custom column names and aux") {
  CsvSchema schema;
  schema.z = "assigned";
  schema.d = "school";
  schema.y = "score";
  schema.cluster = "village";
  schema.aux = {{"distance", "dist_km"}};
  const Sample s = parse_csv(
      "assigned,school,score,village,dist_km\n0,0,1,v1,2.5\n1,2,3,v1,0.5\n0,1,2,v2,\n", schema);
  CHECK(s.size() == 3);
  CHECK(s.cluster_count() == 2);
  CHECK(s.aux(0, "distance") == 2.5);
  CHECK(!s.aux(2, "distance").has_value());
  CHECK(!s.aux(0, "other").has_value());
}

TEST_CASE("csv round trip is exact") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u(0.1, 3.0);
  std::vector<UnitRecord> units;
  for (int i = 0; i < 300; ++i) {
    UnitRecord r;
    r.unit_id = "id" + std::to_string(i);
    r.cluster_id = "cl" + std::to_string(i / 7);
    r.block_id = i % 3 == 0 ? "north" : "south";
    r.z = (i / 7) % 2;
    r.d = static_cast<int>(rng() % 3);
    r.y = n01(rng) * 1e3 / 7.0;
    r.weight = u(rng);
    r.aux["distance"] = u(rng) * 1.1;
    units.push_back(r);
  }
  const Sample s("rt", units);
  CsvSchema schema;
  schema.aux = {{"distance", "distance"}};
  const Sample back = parse_csv(to_csv(s), schema, "rt");
  REQUIRE(back.size() == s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const UnitRecord a = s.unit(i), b = back.unit(i);
    CHECK(a.unit_id == b.unit_id);
    CHECK(a.cluster_id == b.cluster_id);
    CHECK(a.block_id == b.block_id);
    CHECK(a.z == b.z);
    CHECK(a.d == b.d);
    CHECK(a.y == b.y);
    CHECK(std::abs(a.weight - b.weight) <= 1e-12 * a.weight);
    CHECK(a.aux == b.aux);
  }
  CHECK(to_csv(back) == to_csv(s));

  const auto path = std::filesystem::temp_directory_path() / "strata_roundtrip.csv";
  write_csv(s, path.string());
  CHECK(to_csv(ingest_csv(path.string(), schema, "rt")) == to_csv(s));
  std::filesystem::remove(path);
}

TEST_CASE("single block and explicit one block give identical estimates") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  std::string implicit = "z,d,y,weight\n", explicit_block = "z,d,y,weight,block\n";
  for (int i = 0; i < 400; ++i) {
    const int z = i % 2;
    const int d = z == 1 ? static_cast<int>(rng() % 3) : static_cast<int>(rng() % 2);
    const double y = n01(rng) + d;
    const double w = 0.5 + (rng() % 4);
    char line[128];
    std::snprintf(line, sizeof line, "%d,%d,%.17g,%.17g", z, d, y, w);
    implicit += std::string(line) + "\n";
    explicit_block += std::string(line) + ",only\n";
  }
  const Sample a = parse_csv(implicit), b = parse_csv(explicit_block);
  const BoundsAnalysis x = analyze_bounds(a), y = analyze_bounds(b);
  CHECK(x.itt == y.itt);
  CHECK(x.late == y.late);
  CHECK(x.shares.raw.as_array() == y.shares.raw.as_array());
  CHECK(x.complier_effect.lower == y.complier_effect.lower);
  CHECK(x.complier_effect.upper == y.complier_effect.upper);
  CHECK(x.mu0 == y.mu0);
  CHECK(std::isfinite(x.complier_effect.lower));
}

TEST_CASE("keep and with_weights") {
  const Sample s = parse_csv("z,d,y,weight\n0,0,1,1\n1,2,2,1\n0,1,3,2\n1,0,4,1\n");
  const std::vector<std::uint32_t> rows{0, 1};
  const Sample k = s.keep(rows);
  CHECK(k.size() == 2);
  CHECK(k.y()[1] == 2.0);
  const Sample w = s.with_weights({2, 2, 4, 2});
  CHECK(w.block_propensity(0) == s.block_propensity(0));
  CHECK(kind_of([&] { s.with_weights({1, 1, -1, 1}); }) == ErrorKind::DomainViolation);
}

TEST_CASE("estimate report json") {
  EstimateReport r;
  r.name = "itt";
  r.point = 0.5;
  r.se = 0.1;
  r.ci = {{0.3, 0.7}};
  r.method = EstimateMethod::cluster_bootstrap;
  const auto j = to_json(r);
  CHECK(j["name"] == "itt");
  CHECK(j["ci"][0] == 0.3);
  CHECK(j["method"] == "cluster_bootstrap");
}
