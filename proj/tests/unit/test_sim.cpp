#include <cmath>
#include <random>

#include "doctest.h"
#include "noise/sim.hpp"
#include "noise/stats.hpp"
#include "support.hpp"

using namespace noise;
using testing::error_code_of;

TEST_CASE("ideal model values") {
  IdealModelParams p;
  p.t0 = 5;
  p.k1 = 5;
  p.k2 = 10;
  p.slope_transient = 0.5;
  p.slope_saturated = 1.0;
  CHECK(simulate(p, 0, 0) == 5.0);
  CHECK(simulate(p, 5, 0) == 5.0);
  CHECK(simulate(p, 10, 0) == 7.5);
  CHECK(simulate(p, 15, 0) == 12.5);
}

TEST_CASE("noise is reproducible and has the requested spread") {
  IdealModelParams p{100, 10, 20, 1, 2, 0.02, 42};
  CHECK(simulate(p, 7, 3) == simulate(p, 7, 3));
  CHECK(simulate(p, 7, 3) != simulate(p, 7, 4));
  IdealModelParams other = p;
  other.seed = 43;
  CHECK(simulate(p, 7, 3) != simulate(other, 7, 3));

  std::vector<double> v;
  for (std::size_t r = 0; r < 20000; ++r) v.push_back(simulate(p, 0, r) / 100.0);
  double mean = 0, var = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size() - 1);
  CHECK(mean == doctest::Approx(1.0).epsilon(0.001));
  CHECK(std::sqrt(var) == doctest::Approx(0.02).epsilon(0.03));
}

TEST_CASE("noiseless output is piecewise linear and non-decreasing") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    IdealModelParams p;
    p.t0 = 1 + 100 * u(rng);
    p.k1 = std::floor(40 * u(rng));
    p.k2 = p.k1 + std::floor(40 * u(rng));
    p.slope_transient = 3 * u(rng);
    p.slope_saturated = 3 * u(rng);
    CHECK_NOTHROW(p.validate());
    double prev = 0;
    for (std::size_t k = 0; k <= 120; ++k) {
      const double t = simulate(p, k, trial);
      REQUIRE(t >= prev);
      prev = t;
      // second differences vanish away from the breakpoints
      const double kd = static_cast<double>(k);
      if (k >= 1 && kd != p.k1 && kd != p.k2) {
        const double d2 = simulate(p, k + 1, 0) - 2 * t + simulate(p, k - 1, 0);
        REQUIRE(std::fabs(d2) <= 1e-9 * p.t0 * 100);
      }
    }
  }
}

TEST_CASE("parameter validation") {
  IdealModelParams p;
  p.k1 = 3;
  p.k2 = 2;
  CHECK(error_code_of([&] { p.validate(); }) == ErrorCode::InvalidArgument);
  p = {};
  p.t0 = 0;
  CHECK(error_code_of([&] { p.validate(); }) == ErrorCode::InvalidArgument);
  p = {};
  p.sigma = -1;
  CHECK(error_code_of([&] { p.validate(); }) == ErrorCode::InvalidArgument);
  p = {};
  p.slope_saturated = -1;
  CHECK(error_code_of([&] { p.validate(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("summary statistics") {
  const std::vector<double> v{4, 1, 3, 2};
  const auto s = summarize(v);
  CHECK(s.median == 2.5);
  CHECK(s.mean == 2.5);
  CHECK(s.q1 == 1.75);
  CHECK(s.q3 == 3.25);
  CHECK(s.min == 1);
  CHECK(s.max == 4);
  CHECK(error_code_of([] { summarize(std::vector<double>{}); }) == ErrorCode::InvalidArgument);
}
