#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "bam/numerics.hpp"
#include "bam/rng.hpp"

using namespace bam;

TEST_CASE("RealVector rejects NaN and +inf, keeps -inf") {
  CHECK_THROWS_AS(RealVector({0.0, std::nan("")}), std::invalid_argument);
  CHECK_THROWS_AS(RealVector({std::numeric_limits<double>::infinity()}), std::invalid_argument);
  CHECK_NOTHROW(RealVector({kNegInf, 1.0}));
}

TEST_CASE("log_sum_exp basics") {
  CHECK(log_sum_exp(RealVector({0.0})) == 0.0);
  CHECK(log_sum_exp(RealVector({std::log(2.0), std::log(2.0)})) ==
        Catch::Approx(std::log(4.0)).margin(1e-15));
  CHECK(log_sum_exp(RealVector({kNegInf, 0.0})) == 0.0);
  CHECK(is_neg_inf(log_sum_exp(RealVector({kNegInf, kNegInf}))));
  CHECK_THROWS_AS(log_sum_exp(RealVector{}), std::invalid_argument);
}

TEST_CASE("log_sum_exp is stable at large magnitudes") {
  const double lse = log_sum_exp(RealVector({1000.0, 1000.0}));
  CHECK(lse == Catch::Approx(1000.0 + std::log(2.0)).margin(1e-12));
}

TEST_CASE("softmax worked values") {
  const ProbVector u = softmax(RealVector({0.0, 0.0}));
  CHECK(u[0] == 0.5);
  CHECK(u[1] == 0.5);

  const ProbVector p = softmax(RealVector({1.0, 0.0}));
  CHECK(p[0] == Catch::Approx(0.73105857863000487).margin(1e-12));
  CHECK(p[1] == Catch::Approx(0.26894142136999512).margin(1e-12));

  const ProbVector m = softmax(RealVector({0.0, kNegInf, 0.0}));
  CHECK(m[0] == 0.5);
  CHECK(m[1] == 0.0);
  CHECK(m[2] == 0.5);
}

TEST_CASE("softmax of an all-masked row is the flagged zero vector") {
  const ProbVector p = softmax(RealVector({kNegInf, kNegInf, kNegInf}));
  CHECK(p.all_masked());
  for (size_t k = 0; k < p.size(); ++k) CHECK(p[k] == 0.0);
}

TEST_CASE("softmax shift invariance and permutation equivariance") {
  Rng rng(99);
  for (int t = 0; t < 200; ++t) {
    const int n = rng.range_i32(1, 12);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-8, 8);
    const double c = rng.uniform(-20, 20);
    std::vector<double> shifted(v);
    for (double& x : shifted) x += c;
    const ProbVector a = softmax(RealVector(v));
    const ProbVector b = softmax(RealVector(shifted));
    for (int k = 0; k < n; ++k) CHECK(std::abs(a[k] - b[k]) < 1e-12);

    std::vector<double> rev(v.rbegin(), v.rend());
    const ProbVector r = softmax(RealVector(rev));
    for (int k = 0; k < n; ++k) CHECK(std::abs(a[k] - r[n - 1 - k]) < 1e-12);

    double sum = 0.0;
    for (size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k] >= 0.0);
      sum += a[k];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("ssmax reduces to softmax of scaled logits") {
  // n = 1: multiplier is 0, output uniform over unmasked entries
  const ProbVector u = ssmax(RealVector({3.0, -7.0, 2.0}), 1, 1.7);
  for (size_t k = 0; k < u.size(); ++k) CHECK(u[k] == Catch::Approx(1.0 / 3).margin(1e-15));

  // s = 1/ln n makes the multiplier exactly 1
  const int n = 17;
  const ProbVector a = ssmax(RealVector({1.0, 0.0}), n, 1.0 / std::log(double(n)));
  const ProbVector b = softmax(RealVector({1.0, 0.0}));
  CHECK(a[0] == Catch::Approx(b[0]).margin(1e-12));

  // s = 0 flattens everything
  const ProbVector f = ssmax(RealVector({5.0, -5.0}), 100, 0.0);
  CHECK(f[0] == 0.5);
  CHECK(f[1] == 0.5);

  CHECK_THROWS_AS(ssmax(RealVector({0.0}), 0, 1.0), std::invalid_argument);
}

TEST_CASE("ssmax equals softmax of (s ln n) v elementwise") {
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    const int n = rng.range_i32(1, 40);
    const double s = rng.uniform(0.0, 3.0);
    std::vector<double> v(8);
    for (double& x : v) x = rng.uniform(-6, 6);
    if (t % 3 == 0) v[rng.range_i32(0, 8)] = kNegInf;
    const double c = s * std::log(double(n));
    std::vector<double> scaled(v);
    for (double& x : scaled)
      if (!is_neg_inf(x)) x *= c;
    const ProbVector a = ssmax(RealVector(v), n, s);
    const ProbVector b = softmax(RealVector(scaled));
    for (size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) <= 1e-12);
  }
}

TEST_CASE("ssmax keeps masked entries at exactly zero") {
  const ProbVector p = ssmax(RealVector({2.0, kNegInf, 1.0}), 2, 0.8);
  CHECK(p[1] == 0.0);
  CHECK(std::abs(p[0] + p[2] - 1.0) <= 1e-12);
}

TEST_CASE("finite_diff_grad on known derivatives") {
  const auto square = [](const RealVector& x) { return x[0] * x[0]; };
  const RealVector g = finite_diff_grad(square, RealVector({3.0}), 1e-5);
  CHECK(g[0] == Catch::Approx(6.0).margin(1e-6));

  const auto total = [](const RealVector& x) {
    double s = 0;
    for (size_t k = 0; k < x.size(); ++k) s += x[k];
    return s;
  };
  const RealVector ones = finite_diff_grad(total, RealVector({1.0, -2.0, 0.5}), 1e-5);
  for (size_t k = 0; k < ones.size(); ++k) CHECK(ones[k] == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("gradient of log_sum_exp is softmax") {
  const auto lse = [](const RealVector& x) { return log_sum_exp(x); };
  {
    const RealVector g = finite_diff_grad(lse, RealVector({1.0, 0.0}), 1e-5);
    const ProbVector p = softmax(RealVector({1.0, 0.0}));
    CHECK(g[0] == Catch::Approx(p[0]).margin(1e-6));
    CHECK(g[1] == Catch::Approx(p[1]).margin(1e-6));
  }
  Rng rng(12345);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> x(8);
    for (double& v : x) v = rng.uniform(-5, 5);
    const RealVector g = finite_diff_grad(lse, RealVector(x), 1e-5);
    const ProbVector p = softmax(RealVector(x));
    for (int k = 0; k < 8; ++k) CHECK(std::abs(g[k] - p[k]) < 1e-6);
  }
}

TEST_CASE("finite_diff_grad reports the offending coordinate") {
  const auto bad = [](const RealVector& x) {
    return x[1] > 1.0 ? std::numeric_limits<double>::quiet_NaN() : x[0];
  };
  try {
    finite_diff_grad(bad, RealVector({0.0, 1.0}), 1e-5);
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
  }
}
