#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "dbuf/error.hpp"
#include "dbuf/schedule.hpp"

using namespace dbuf;

TEST_SUITE("schedule_latency") {
  TEST_CASE("inference schedule is a linspace from epsilon to t_max") {
    BbedParams p;
    const auto s2 = inference_schedule(2, p);
    REQUIRE(s2.size() == 2);
    CHECK(s2.at(1) == 0.03);
    CHECK(s2.at(2) == 0.999);
    CHECK(s2.at(0) == 0.0);

    const auto s = inference_schedule(16, p);
    REQUIRE(s.size() == 16);
    CHECK(s.at(1) == p.epsilon);
    CHECK(s.at(16) == p.t_max);
    const double gap = (p.t_max - p.epsilon) / 15.0;
    for (std::size_t i = 1; i < 16; ++i) CHECK(std::abs(s.at(i + 1) - s.at(i) - gap) < 1e-12);
    CHECK_THROWS_AS(inference_schedule(1, p), DomainError);
  }

  TEST_CASE("schedule vectors reject unsorted or out-of-range steps") {
    CHECK_THROWS_AS(ScheduleVector({0.5, 0.4}), DomainError);
    CHECK_THROWS_AS(ScheduleVector({0.5, 0.5}), DomainError);
    CHECK_THROWS_AS(ScheduleVector({0.0, 0.5}), DomainError);
    CHECK_THROWS_AS(ScheduleVector({0.1, 1.0}), DomainError);
    CHECK_NOTHROW(ScheduleVector({0.1, 0.2, 0.9}));
  }

  TEST_CASE("training schedule pins both endpoints and stays ascending") {
    BbedParams p;
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
      const auto s2 = training_schedule(2, p, rng);
      CHECK(s2.at(1) == p.epsilon);
      CHECK(s2.at(2) == p.t_max);
    }
    for (int i = 0; i < 200; ++i) {
      const auto s = training_schedule(16, p, rng);
      CHECK(s.at(1) == p.epsilon);
      CHECK(s.at(16) == p.t_max);
      for (std::size_t k = 1; k < 16; ++k) CHECK(s.at(k + 1) > s.at(k));
    }
  }

  TEST_CASE("training schedule interior points follow uniform order statistics") {
    // The k-th of n sorted uniforms on (a, b) has mean a + (b - a) k/(n+1) and
    // variance (b - a)^2 k (n + 1 - k) / ((n + 1)^2 (n + 2)).
    BbedParams p;
    Rng rng(11);
    const std::size_t B = 16, n = B - 2, draws = 10000;
    std::vector<double> sum(n, 0.0);
    for (std::size_t d = 0; d < draws; ++d) {
      const auto s = training_schedule(B, p, rng);
      for (std::size_t k = 0; k < n; ++k) sum[k] += s.at(k + 2);
    }
    const double a = p.epsilon, b = p.t_max, N = static_cast<double>(n);
    for (std::size_t k = 1; k <= n; ++k) {
      const double K = static_cast<double>(k);
      const double mean = a + (b - a) * K / (N + 1);
      const double var = (b - a) * (b - a) * K * (N + 1 - K) / ((N + 1) * (N + 1) * (N + 2));
      const double se = std::sqrt(var / static_cast<double>(draws));
      CHECK(std::abs(sum[k - 1] / static_cast<double>(draws) - mean) < 4.0 * se);
    }
  }

  TEST_CASE("algorithmic latency reproduces the published values") {
    StftConfig cfg;
    CHECK(algorithmic_latency(cfg, 0) == doctest::Approx(0.031875).epsilon(1e-15));
    CHECK(algorithmic_latency(cfg, 9) == doctest::Approx(0.175875).epsilon(1e-15));
    CHECK(algorithmic_latency(cfg, 15) == doctest::Approx(0.271875).epsilon(1e-15));
    CHECK(std::abs(algorithmic_latency(cfg, 0) * 1000.0 - 32.0) < 1.0);
    CHECK(std::abs(algorithmic_latency(cfg, 9) * 1000.0 - 176.0) < 1.0);
    CHECK(std::abs(algorithmic_latency(cfg, 15) * 1000.0 - 272.0) < 1.0);
    // Affine in d with slope hop / fs.
    for (std::size_t d = 0; d < 15; ++d) {
      CHECK(algorithmic_latency(cfg, d + 1) - algorithmic_latency(cfg, d) == doctest::Approx(0.016).epsilon(1e-12));
    }
  }

  TEST_CASE("real-time factor") {
    StftConfig cfg;
    CHECK(real_time_factor(0.016, cfg) == doctest::Approx(1.0));
    CHECK(real_time_factor(0.008, cfg) == doctest::Approx(0.5));
    CHECK(real_time_factor(0.0, cfg) == 0.0);
    const auto r = make_latency_report(cfg, 9, 0.004);
    CHECK(r.algorithmic_latency == doctest::Approx(0.175875));
    CHECK(r.total_latency == doctest::Approx(0.175875 + 0.016));
    CHECK(r.realtime_ok());
    CHECK_FALSE(make_latency_report(cfg, 0, 0.02).realtime_ok());
    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j.at("delay_frames").get<std::size_t>() == 9);
    CHECK(j.at("algorithmic_latency_ms").get<double>() == doctest::Approx(175.875));
  }
}
