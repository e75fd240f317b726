#include <doctest.h>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>

#include "dbuf/error.hpp"
#include "dbuf/rng.hpp"
#include "dbuf/sde_bbed.hpp"
#include "oracles.hpp"

using namespace dbuf;

TEST_SUITE("sde_bbed") {
  TEST_CASE("mean evolution endpoints and affinity") {
    const std::complex<double> x0(1.0, -2.0), y(0.5, 3.0);
    CHECK(mean_evolution(x0, y, 0.0) == x0);
    CHECK(mean_evolution(x0, y, 1.0) == y);
    CHECK(mean_evolution(1.0, 0.0, 0.25) == std::complex<double>(0.75));
    const double a = -1.7;
    const auto lhs = mean_evolution(a * x0, a * y, 0.3);
    const auto rhs = a * mean_evolution(x0, y, 0.3);
    CHECK(std::abs(lhs - rhs) < 1e-15);
    CHECK_THROWS_AS(mean_evolution(x0, y, 1.5), DomainError);
    CHECK_THROWS_AS(mean_evolution(x0, y, -0.1), DomainError);
  }

  TEST_CASE("Ei against quadrature on both sides of the singularity") {
    double worst = 0.0;
    for (double x : dbtest::ei_grid(500)) {
      const double ref = dbtest::ei_quadrature(x);
      const double rel = std::abs(exp_integral_ei(x) - ref) / std::abs(ref);
      worst = std::max(worst, rel);
    }
    CHECK(worst < 1e-10);
  }

  TEST_CASE("Ei frozen values") {
    // 30-digit references, frozen from an arbitrary-precision evaluation.
    const double a = -2.0 * std::log(2.6);
    CHECK(exp_integral_ei(a) == doctest::Approx(-0.0553439066046043730347).epsilon(1e-12));
    CHECK(exp_integral_ei(a) == doctest::Approx(dbtest::ei_quadrature(a)).epsilon(1e-11));
    CHECK(exp_integral_ei(1.0) == doctest::Approx(1.89511781635593675547).epsilon(1e-13));
    CHECK(exp_integral_ei(5.0) == doctest::Approx(40.1852753558031774551).epsilon(1e-13));
    CHECK(exp_integral_ei(-7.5) == doctest::Approx(-6.58308932670802306169e-5).epsilon(1e-12));
    CHECK(exp_integral_ei(45.0) == doctest::Approx(7.94391603570445377151e17).epsilon(1e-12));
    CHECK(exp_integral_ei(-50.0) == doctest::Approx(-3.78326402955045901870e-24).epsilon(1e-12));
    // Ei' = e^x / x < 0 on x < 0, so Ei falls toward -inf as x -> 0-.
    CHECK(exp_integral_ei(-0.1) < exp_integral_ei(-1.0));
    for (int i = 1; i < 100; ++i) CHECK(exp_integral_ei(-i / 100.0) < exp_integral_ei(-(i + 1) / 100.0));
    CHECK_THROWS_AS(exp_integral_ei(0.0), DomainError);
  }

  TEST_CASE("Ei(1) equals the textbook series") {
    // gamma + ln|x| + sum x^n / (n n!)
    double s = 0.0, term = 1.0;
    for (int n = 1; n < 40; ++n) {
      term *= 1.0 / n;
      s += term / n;
    }
    CHECK(exp_integral_ei(1.0) == doctest::Approx(std::numbers::egamma + s).epsilon(1e-14));
  }

  TEST_CASE("variance vanishes at both ends") {
    BbedParams p;
    CHECK(variance(0.0, p) == 0.0);
    CHECK(variance(1.0, p) == 0.0);
    CHECK(stddev(0.0, p) == 0.0);
    CHECK_THROWS_AS(variance(1.01, p), DomainError);
  }

  TEST_CASE("closed-form variance follows the variance ODE") {
    BbedParams p;
    double worst = 0.0;
    for (int i = 1; i <= 99; ++i) {
      const double t = i / 100.0;
      const double ref = dbtest::variance_rk4(t, p.c, p.r);
      worst = std::max(worst, std::abs(variance(t, p) - ref) / ref);
    }
    CHECK(worst < 1e-6);
    // Non-default parameters go through the same formula.
    BbedParams q{0.3, 1.5, 0.999, 0.03};
    for (double t : {0.1, 0.5, 0.9}) {
      CHECK(variance(t, q) == doctest::Approx(dbtest::variance_rk4(t, q.c, q.r)).epsilon(1e-6));
    }
  }

  TEST_CASE("variance frozen values") {
    BbedParams p;
    // Frozen from the RK4 oracle above (1e-6 relative).
    CHECK(variance(0.03, p) == doctest::Approx(0.0023967).epsilon(2e-4));
    CHECK(variance(0.5, p) == doctest::Approx(0.037193).epsilon(2e-4));
    CHECK(variance(0.999, p) == doctest::Approx(5.3387e-4).epsilon(2e-4));
  }

  TEST_CASE("drift and diffusion") {
    CHECK(drift(2.0, 2.0, 0.4) == std::complex<double>(0.0));
    CHECK(drift(0.0, 1.0, 0.5) == std::complex<double>(2.0));
    CHECK_THROWS_AS(drift(0.0, 1.0, 1.0), DomainError);
    BbedParams p;
    CHECK(diffusion(0.0, p) == doctest::Approx(0.282843).epsilon(1e-6));
    CHECK(diffusion(1.0, p) == doctest::Approx(0.735391).epsilon(1e-6));
    for (int i = 0; i < 20; ++i) CHECK(diffusion((i + 1) / 21.0, p) > diffusion(i / 21.0, p));
  }

  TEST_CASE("perturbation sampling at t = 0 is exact") {
    BbedParams p;
    Rng rng(1);
    const std::complex<double> x0(0.3, -0.2), y(1.0, 1.0);
    for (int i = 0; i < 10; ++i) CHECK(sample_perturbation(x0, y, 0.0, p, rng) == x0);
  }

  TEST_CASE("perturbation kernel statistics") {
    BbedParams p;
    const std::complex<double> x0(0.8, -0.4), y(-0.2, 0.6);
    const int n = 100000;
    for (double t : {0.25, 0.5, 0.75}) {
      Rng rng(static_cast<std::uint64_t>(t * 1000));
      const auto k = perturbation_kernel(x0, y, t, p);
      const double var = k.std * k.std;
      std::complex<double> sum = 0.0;
      double sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const auto v = sample_perturbation(x0, y, t, p, rng);
        sum += v;
        sq += std::norm(v - k.mean);
      }
      const auto mean = sum / static_cast<double>(n);
      // Each component has variance var/2; |v - mu|^2 has variance var^2.
      const double se_mean = std::sqrt(var / 2.0 / n);
      CHECK(std::abs(mean.real() - k.mean.real()) < 4.0 * se_mean);
      CHECK(std::abs(mean.imag() - k.mean.imag()) < 4.0 * se_mean);
      CHECK(std::abs(sq / n - var) < 4.0 * var / std::sqrt(static_cast<double>(n)));
    }
  }

  TEST_CASE("complex normal convention: unit total variance split evenly") {
    Rng rng(77);
    const int n = 200000;
    double re2 = 0.0, im2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto z = rng.complex_normal();
      re2 += z.real() * z.real();
      im2 += z.imag() * z.imag();
    }
    CHECK(re2 / n == doctest::Approx(0.5).epsilon(0.02));
    CHECK(im2 / n == doctest::Approx(0.5).epsilon(0.02));
  }

  TEST_CASE("parameter validation") {
    BbedParams p;
    p.epsilon = 0.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = BbedParams{};
    p.t_max = 1.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    p = BbedParams{};
    p.c = -1.0;
    CHECK_THROWS_AS(p.validate(), ConfigError);
  }
}
