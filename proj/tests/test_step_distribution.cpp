#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "strata/step_distribution.hpp"

using namespace strata;

TEST_CASE("ties merge and masses normalize") {
  const std::vector<double> y{3, 1, 2, 1, 3, 3};
  const std::vector<double> w{1, 1, 2, 1, 1, 2};
  const auto d = StepDistribution::from_points(y, w);
  REQUIRE(d.support == std::vector<double>{1, 2, 3});
  CHECK(d.mass[0] == doctest::Approx(0.25));
  CHECK(d.mass[1] == doctest::Approx(0.25));
  CHECK(d.mass[2] == doctest::Approx(0.5));
  CHECK(d.cdf(1.0) == doctest::Approx(0.25));
  CHECK(d.cdf_below(1.0) == 0.0);
  CHECK(d.cdf(2.5) == doctest::Approx(0.5));
  CHECK(d.cdf(0.0) == 0.0);
  CHECK(d.cdf(9.0) == 1.0);
  CHECK(d.mean() == doctest::Approx((1 * 0.25 + 2 * 0.25 + 3 * 0.5)));
}

TEST_CASE("quantile is the generalized inverse") {
  const std::vector<double> y{1, 2, 3, 4};
  const std::vector<double> w{1, 1, 1, 1};
  const auto d = StepDistribution::from_points(y, w);
  CHECK(d.quantile(0.5) == 2.0);
  CHECK(d.quantile(0.50000001) == 3.0);
  CHECK(d.quantile(0.25) == 1.0);
  CHECK(d.quantile(1.0) == 4.0);
  CHECK(d.quantile(0.0) == 1.0);
}

TEST_CASE("generalized inverse index tolerates rounding at the level") {
  const std::vector<double> cum{0.1, 0.3, 0.6000000000000001, 1.0};
  CHECK(generalized_inverse_index(cum, 0.6) == 2);
  CHECK(generalized_inverse_index(cum, 0.3) == 1);
  const std::vector<double> below{0.1, 0.29999999999999993, 1.0};
  CHECK(generalized_inverse_index(below, 0.3) == 1);
  CHECK(generalized_inverse_index(cum, 0.0) == 0);
}

TEST_CASE("tail trims split the boundary atom") {
  const std::vector<double> s{1, 2, 3, 4};
  const std::vector<double> m{0.25, 0.25, 0.25, 0.25};
  const TailTrim lo = lower_tail(s, m, 0.5);
  CHECK(lo.mean == doctest::Approx(1.5));
  CHECK(lo.cutpoint == 2.0);
  const TailTrim hi = upper_tail(s, m, 0.5);
  CHECK(hi.mean == doctest::Approx(3.5));
  CHECK(hi.cutpoint == 3.0);

  const TailTrim part = lower_tail(s, m, 0.3);
  CHECK(part.cutpoint == 2.0);
  CHECK(part.boundary_mass == doctest::Approx(0.05));
  CHECK(part.mean == doctest::Approx((0.25 * 1 + 0.05 * 2) / 0.3));
  CHECK(part.retained_mass == doctest::Approx(0.3));

  const TailTrim top = upper_tail(s, m, 0.3);
  CHECK(top.cutpoint == 3.0);
  CHECK(top.mean == doctest::Approx((0.25 * 4 + 0.05 * 3) / 0.3));

  const TailTrim all = lower_tail(s, m, 1.0);
  CHECK(all.mean == doctest::Approx(2.5));
}

TEST_CASE("retained mass is exact on random distributions") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    std::vector<double> y(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = std::floor(u(rng) * 8.0);  // many ties
      w[i] = 0.1 + u(rng);
    }
    const auto d = StepDistribution::from_points(y, w);
    const double f = 0.01 + 0.98 * u(rng);
    const TailTrim lo = lower_tail(d.support, d.mass, f);
    const TailTrim hi = upper_tail(d.support, d.mass, f);
    CHECK(std::abs(lo.retained_mass - f) <= 1e-10);
    CHECK(std::abs(hi.retained_mass - f) <= 1e-10);
    CHECK(lo.mean <= hi.mean + 1e-12);
    // The lower tail cut sits at the generalized inverse at f.
    CHECK(lo.cutpoint == d.quantile(f));
  }
}

TEST_CASE("silverman bandwidth") {
  std::vector<double> y, w;
  for (int i = 0; i < 100; ++i) {
    y.push_back(i);
    w.push_back(1.0);
  }
  double mean = 49.5, var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / 100.0);
  // The weighted IQR of 0..99 is about 50, so sd (28.9) is the smaller spread.
  const double expect = 0.9 * sd * std::pow(100.0, -0.2);
  CHECK(silverman_bandwidth(y, w) == doctest::Approx(expect).epsilon(1e-3));

  const std::vector<double> flat{2, 2, 2, 2, 5};
  const std::vector<double> ones(5, 1.0);
  // Zero IQR falls back to the standard deviation.
  CHECK(silverman_bandwidth(flat, ones) > 0.0);
}
