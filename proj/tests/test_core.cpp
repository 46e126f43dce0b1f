#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dposhift/core.hpp"
#include "dposhift/rng.hpp"
#include "testutil.hpp"

using namespace dposhift;

TEST_CASE("stable_sigmoid matches exact values") {
  CHECK(stable_sigmoid(0.0) == 0.5);

  // asymptote: sigma(50) = 1 - e^-50 up to 1e-15 relative
  const double want = 1.0 - std::exp(-50.0);
  CHECK(testutil::rel_err(stable_sigmoid(50.0), want) <= 1e-15);

  // extended-precision oracle
  CHECK(testutil::rel_err(stable_sigmoid(0.0525), testutil::sigmoid_ld(0.0525L)) <= 1e-14);
}

TEST_CASE("stable_sigmoid is overflow-safe and monotone") {
  CHECK(stable_sigmoid(1e4) == 1.0);
  CHECK(stable_sigmoid(-1e4) >= 0.0);
  CHECK(stable_sigmoid(-1e4) < 1e-300);

  Rng rng(7);
  double prev = stable_sigmoid(-30.0);
  for (double z = -29.0; z <= 30.0; z += 1.0) {
    const double cur = stable_sigmoid(z);
    CHECK(cur > prev);
    prev = cur;
  }
  (void)rng;
}

TEST_CASE("stable_sigmoid complement identity") {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const double z = (rng.uniform01() - 0.5) * 60.0;
    CHECK(std::fabs(stable_sigmoid(z) + stable_sigmoid(-z) - 1.0) <= 1e-15);
  }
}

TEST_CASE("stable_sigmoid rejects non-finite input") {
  CHECK_THROWS_AS(stable_sigmoid(std::nan("")), std::domain_error);
  CHECK_THROWS_AS(stable_sigmoid(INFINITY), std::domain_error);
}

TEST_CASE("neg_log_sigmoid matches exact values") {
  CHECK(neg_log_sigmoid(0.0) == Catch::Approx(0.6931471805599453).margin(1e-16));

  // softplus asymptote at large negative z
  CHECK(testutil::rel_err(neg_log_sigmoid(-1000.0), 1000.0) <= 1e-12);

  CHECK(testutil::rel_err(neg_log_sigmoid(2.0), testutil::neg_log_sigmoid_ld(2.0L)) <= 1e-14);
}

TEST_CASE("neg_log_sigmoid agrees with -log(sigmoid)") {
  Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    const double z = (rng.uniform01() - 0.5) * 60.0;
    CHECK(std::fabs(neg_log_sigmoid(z) + std::log(stable_sigmoid(z))) <= 1e-12);
  }
  CHECK_THROWS_AS(neg_log_sigmoid(std::nan("")), std::domain_error);
  // never exponentiates a large positive argument
  CHECK(std::isfinite(neg_log_sigmoid(-1e4)));
  CHECK(std::isfinite(neg_log_sigmoid(1e4)));
}

TEST_CASE("validate_dataset flags the documented violations") {
  const std::size_t V = 8;
  PreferenceTriple good{0, TokenSeq{1, 2}, TokenSeq{3}, TokenSeq{4, 5}};

  SECTION("clean dataset passes") {
    const auto report = validate_dataset({good}, V);
    CHECK(report.record_count == 1);
    CHECK(report.passed());
    CHECK(report.issues.empty());
  }

  SECTION("empty rejected response is one violation") {
    PreferenceTriple bad = good;
    bad.rejected.ids.clear();
    const auto report = validate_dataset({bad}, V);
    CHECK(report.empty_response_count == 1);
    CHECK_FALSE(report.passed());
  }

  SECTION("token id == V is out of vocabulary") {
    PreferenceTriple bad = good;
    bad.chosen.ids = {static_cast<Token>(V)};
    const auto report = validate_dataset({bad}, V);
    CHECK(report.oov_count == 1);
    CHECK_FALSE(report.passed());
  }

  SECTION("validation is pure") {
    PreferenceTriple bad = good;
    bad.chosen.ids = {static_cast<Token>(V)};
    const auto a = validate_dataset({good, bad}, V);
    const auto b = validate_dataset({good, bad}, V);
    CHECK(a.record_count == b.record_count);
    CHECK(a.oov_count == b.oov_count);
    CHECK(a.empty_response_count == b.empty_response_count);
    REQUIRE(a.issues.size() == b.issues.size());
    for (std::size_t i = 0; i < a.issues.size(); ++i) {
      CHECK(a.issues[i].record_id == b.issues[i].record_id);
      CHECK(a.issues[i].detail == b.issues[i].detail);
    }
  }
}

TEST_CASE("config validation") {
  ObjectiveConfig obj;
  obj.beta = 0.0;
  CHECK_THROWS_AS(obj.validate(), std::domain_error);
  obj.beta = 0.1;
  obj.alpha = -1.0;
  CHECK_THROWS_AS(obj.validate(), std::domain_error);
  obj.alpha = 0.0;
  CHECK_NOTHROW(obj.validate());

  DiagnosticsConfig diag;
  diag.gamma = 0.0;
  CHECK_THROWS_AS(diag.validate(), std::domain_error);
  diag.gamma = 1.0;
  diag.eta = -1.0;
  CHECK_THROWS_AS(diag.validate(), std::domain_error);
}
