#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <sstream>

#include "bam/theory.hpp"

using namespace bam;

TEST_CASE("verify_lemma1 exact uniform marginals") {
  {
    const VerifierReport r = verify_lemma1(4);
    CHECK(r.passed);
    CHECK(r.max_residual == 0.0);
  }
  {
    const VerifierReport r = verify_lemma1(1);
    CHECK(r.passed);
    CHECK(r.max_residual == 0.0);
  }
  {
    const VerifierReport r = verify_lemma1(64);
    CHECK(r.passed);
    CHECK(r.max_residual < 1e-15);
  }
}

TEST_CASE("lemma1 harness detects a broken softmax") {
  // mutated row: all mass on the first position instead of uniform
  const auto broken = [](int /*i*/, int L) {
    std::vector<double> p(L, 0.0);
    p[0] = 1.0;
    return ProbVector(p, false);
  };
  const VerifierReport r = detail::lemma1_report(8, broken, 1e-15);
  CHECK_FALSE(r.passed);
  CHECK(r.max_residual > 1e-3);
}

TEST_CASE("verify_lemma2 matches the worked row and brute force") {
  {
    const VerifierReport r = verify_lemma2(2, 1.0);
    CHECK(r.passed);
    // worked row at i=2: [e^-1/(1+e^-1), 1/(1+e^-1)]
    const BiasMatrix mask = causal_mask(2);
    const BiasMatrix alibi = alibi_matrix(2, 1.0);
    const ProbVector p = attention_row(RealVector({0.0, 0.0}), {mask.row(1), alibi.row(1)});
    CHECK(p[0] == Catch::Approx(0.26894).margin(5e-6));
    CHECK(p[1] == Catch::Approx(0.73106).margin(5e-6));
  }
  {
    const VerifierReport r = verify_lemma2(32, 0.5);
    CHECK(r.passed);
    CHECK(r.max_residual < 1e-12);
  }
  // row 1 is [1] regardless of m: covered by residual 0 at i=1 for any m
  for (double m : {0.0625, 0.25, 1.0, 3.0}) CHECK(verify_lemma2(1, m).passed);
}

TEST_CASE("verify_locality_limit for ALiBi") {
  std::vector<long long> ds;
  for (long long d = 4; d <= 64; d *= 2) ds.push_back(d);
  // zero content: e^-64 against a window of size 65
  const VerifierReport zero =
      verify_locality_limit(AlibiBias{1.0}, ds, 1e-27, 20240601, 5.0, /*content_seeds=*/0);
  CHECK(zero.passed);
  CHECK(zero.max_residual < 1e-27);
  CHECK(zero.claim_id == "lemma3");

  // bounded random content stays monotone and vanishes along the full schedule
  const VerifierReport r =
      verify_locality_limit(AlibiBias{1.0}, default_distance_schedule(), 1e-12);
  CHECK(r.passed);
}

TEST_CASE("verify_locality_limit for BAM theta_beta > 0") {
  const VerifierReport r = verify_locality_limit(BamBiasSpec{ThetaParams(0, 0, 1)},
                                                 default_distance_schedule(), 1e-12);
  CHECK(r.passed);
  CHECK(r.claim_id == "lemma4");

  // heavier tail: at the same distance the 0.5-shape weight exceeds ALiBi's
  const VerifierReport half = verify_locality_limit(BamBiasSpec{ThetaParams(0, 0, 0.5)},
                                                    default_distance_schedule(), 1e-12);
  CHECK(half.passed);
  CHECK(half.max_residual > r.max_residual);
}

TEST_CASE("verify_locality_limit rejects the wrong regime") {
  CHECK_THROWS_WITH(verify_locality_limit(BamBiasSpec{ThetaParams(0, 0, -0.5)},
                                          default_distance_schedule(), 1e-12),
                    "verify_locality_limit: wrong regime (needs theta_beta > 0)");
  CHECK_THROWS_AS(verify_locality_limit(AlibiBias{1.0}, {4, 4}, 1e-12), std::invalid_argument);
}

TEST_CASE("verify_theorem2 worked ratios") {
  {
    const VerifierReport r = verify_theorem2(0.5, 1.0, {2, 4, 16, 256, 4096});
    CHECK(r.passed);
  }
  // spot values: ratio(16) = 0.25 and ratio(4) = 0.5 at beta = 0.5
  const double alpha = std::pow(1.0, -1.0 / 0.5);
  CHECK(ggd_log_density_unnorm(16, 0, alpha, 0.5) / (-16.0) == Catch::Approx(0.25).margin(1e-12));
  CHECK(ggd_log_density_unnorm(4, 0, alpha, 0.5) / (-4.0) == Catch::Approx(0.5).margin(1e-12));
  CHECK_THROWS_AS(verify_theorem2(1.5, 1.0, {2}), std::invalid_argument);
  CHECK_THROWS_AS(verify_theorem2(0.5, 1.0, {1, 2}), std::invalid_argument);
}

TEST_CASE("verify_theorem3: self weight is suppressed for negative shapes") {
  for (double tb : {-0.5, -1.0}) {
    const VerifierReport r =
        verify_theorem3(ThetaParams(0, 0, tb), default_length_schedule(), 1e-12);
    CHECK(r.passed);
  }
  CHECK_THROWS_AS(verify_theorem3(ThetaParams(0, 0, 0.5), {16}, 1e-12), std::invalid_argument);
}

TEST_CASE("verify_theorem4: biased row approaches content-only attention") {
  for (double tb : {-0.5, -1.0}) {
    const VerifierReport r =
        verify_theorem4(ThetaParams(0, 0, tb), default_length_schedule(), 1e-3);
    CHECK(r.passed);
  }
  CHECK_THROWS_AS(verify_theorem4(ThetaParams(0, 0, 0.5), {16}, 1e-3), std::invalid_argument);
}

TEST_CASE("theta = (0,0,-1) far bias is a small nudge only") {
  // at distance 100 the bias is -(100 + 1e-5)^-1, within 1e-6 of -0.01
  CHECK(bam_bias(-100, ThetaParams(0, 0, -1)) == Catch::Approx(-0.01).margin(1e-6));
}

TEST_CASE("verify_theorem3_4 combines both regimes") {
  const VerifierReport r =
      verify_theorem3_4(ThetaParams(0, 0, -1), default_length_schedule(), 1e-3, 1e-12);
  CHECK(r.passed);
  CHECK(r.threshold == 1.0);
  CHECK_THROWS_AS(verify_theorem3_4(ThetaParams(0, 0, 1), {16}, 1e-3, 1e-12),
                  std::invalid_argument);
}

TEST_CASE("verify_theorem1 and verify_appendix_h pass at pinned thresholds") {
  const VerifierReport t1 = verify_theorem1(1000);
  CHECK(t1.passed);
  CHECK(t1.max_residual < 1e-12);
  const VerifierReport h = verify_appendix_h(1000);
  CHECK(h.passed);
  CHECK(h.max_residual < 1e-9);
}

TEST_CASE("run_all_verifiers covers each claim exactly once and is deterministic") {
  const std::vector<VerifierReport> a = run_all_verifiers(2026);
  const std::vector<VerifierReport> b = run_all_verifiers(2026);
  REQUIRE(a.size() == b.size());
  for (size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].claim_id == b[k].claim_id);
    CHECK(a[k].max_residual == b[k].max_residual);
    CHECK(a[k].seed == b[k].seed);
  }

  std::map<std::string, int> count;
  for (const VerifierReport& r : a) {
    ++count[r.claim_id];
    CHECK(r.passed);
    CHECK(r.passed == (r.max_residual <= r.threshold));
  }
  for (const char* id :
       {"lemma1", "lemma2", "lemma3", "lemma4", "theorem1", "theorem2", "theorem3", "theorem4"})
    CHECK(count[id] == 1);
  CHECK(count["appendix_h"] == 1);
}

TEST_CASE("reports serialize one record per claim") {
  std::ostringstream os;
  write_reports_tsv(os, {VerifierReport::make("lemma1", 0.0, 1e-15, "L=4", 7)});
  const std::string text = os.str();
  CHECK(text.find("claim_id\tmax_residual") != std::string::npos);
  CHECK(text.find("lemma1\t0\t") != std::string::npos);
  CHECK(text.find("\t7\tL=4") != std::string::npos);
}
