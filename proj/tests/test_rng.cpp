#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cq/rng.hpp"

using cq::CounterRng;

TEST_CASE("counter rng is a pure function of its inputs") {
  CounterRng a(123, 7), b(123, 7);
  for (std::uint64_t step : {0ULL, 1ULL, 999ULL}) {
    for (std::uint64_t draw : {0ULL, 1ULL, 5ULL}) {
      REQUIRE(a.normal(step, draw) == b.normal(step, draw));
      REQUIRE(a.uniform(step, draw) == b.uniform(step, draw));
    }
  }
}

TEST_CASE("distinct streams and seeds decorrelate") {
  CounterRng a(123, 7), b(123, 8), c(124, 7);
  int equal_ab = 0, equal_ac = 0;
  for (std::uint64_t step = 0; step < 64; ++step) {
    if (a.normal(step, 0) == b.normal(step, 0)) ++equal_ab;
    if (a.normal(step, 0) == c.normal(step, 0)) ++equal_ac;
  }
  REQUIRE(equal_ab == 0);
  REQUIRE(equal_ac == 0);
}

TEST_CASE("uniform variates stay inside (0, 1]") {
  CounterRng rng(5, 0);
  for (std::uint64_t i = 0; i < 10000; ++i) {
    double u = rng.uniform(i, 0);
    REQUIRE(u > 0.0);
    REQUIRE(u <= 1.0);
  }
}

TEST_CASE("normal variates have the right first moments") {
  CounterRng rng(2024, 3);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0, lag1 = 0.0;
  double prev = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal(static_cast<std::uint64_t>(i), 0);
    sum += x;
    sum2 += x * x;
    if (i > 0) lag1 += x * prev;
    prev = x;
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  double corr = (lag1 / (n - 1)) / var;
  // Standard errors: mean ~ 1/sqrt(n) = 0.0022, var ~ sqrt(2/n) = 0.0032.
  REQUIRE(std::abs(mean) < 0.01);
  REQUIRE(std::abs(var - 1.0) < 0.02);
  REQUIRE(std::abs(corr) < 0.01);
}

TEST_CASE("draw indices within a step are independent") {
  CounterRng rng(77, 1);
  const int n = 100000;
  double dot = 0.0, s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal(static_cast<std::uint64_t>(i), 0);
    double y = rng.normal(static_cast<std::uint64_t>(i), 1);
    dot += x * y;
    s1 += x;
    s2 += y;
  }
  double cov = dot / n - (s1 / n) * (s2 / n);
  REQUIRE(std::abs(cov) < 0.01);
}
