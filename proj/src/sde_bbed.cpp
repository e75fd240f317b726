#include "dbuf/sde_bbed.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "dbuf/error.hpp"

namespace dbuf {

void BbedParams::validate() const {
  if (!(c > 0.0)) throw ConfigError("bbed: c must be positive");
  if (!(r > 0.0) || r == 1.0) throw ConfigError("bbed: r must be positive and != 1");
  if (!(epsilon > 0.0 && epsilon < t_max && t_max < 1.0)) {
    throw ConfigError("bbed: require 0 < epsilon < t_max < 1");
  }
}

namespace {

void check_unit_interval(double t, const char* what) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError(std::string(what) + ": t=" + std::to_string(t) + " outside [0, 1]");
}

// gamma + ln|x| + sum x^n / (n n!)
double ei_series(double x) {
  double term = 1.0;
  double sum = 0.0;
  for (int n = 1; n < 500; ++n) {
    term *= x / n;
    const double add = term / n;
    sum += add;
    if (std::abs(add) <= 1e-17 * std::abs(sum)) break;
  }
  return std::numbers::egamma + std::log(std::abs(x)) + sum;
}

// E1(z) for z > 1 by the modified Lentz continued fraction.
double e1_continued_fraction(double z) {
  constexpr double tiny = 1e-300;
  double b = z + 1.0;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 1000; ++i) {
    const double a = -static_cast<double>(i) * i;
    b += 2.0;
    d = 1.0 / (a * d + b);
    c = b + a / c;
    const double delta = c * d;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return h * std::exp(-z);
}

// e^x / x * sum n! / x^n, truncated at the smallest term.
double ei_asymptotic(double x) {
  double term = 1.0;
  double sum = 1.0;
  for (int n = 1; n < 100; ++n) {
    const double next = term * n / x;
    if (next >= term) break;
    term = next;
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return std::exp(x) / x * sum;
}

}  // namespace

double exp_integral_ei(double x) {
  if (x == 0.0) throw DomainError("exp_integral_ei: singular at x = 0");
  if (std::isnan(x)) throw DomainError("exp_integral_ei: NaN argument");
  if (x < -6.0) return -e1_continued_fraction(-x);
  if (x <= 40.0) return ei_series(x);
  return ei_asymptotic(x);
}

std::complex<double> mean_evolution(std::complex<double> x0, std::complex<double> y, double t) {
  check_unit_interval(t, "mean_evolution");
  return (1.0 - t) * x0 + t * y;
}

double variance(double t, const BbedParams& p) {
  check_unit_interval(t, "variance");
  if (t == 0.0 || t == 1.0) return 0.0;  // both terms vanish; Ei(0) only enters through a (1-t)^2 ln(1-t) limit
  const double log_r = std::log(p.r);
  const double e = exp_integral_ei(2.0 * (t - 1.0) * log_r) - exp_integral_ei(-2.0 * log_r);
  // log(r^(2 r^2)) = 2 r^2 log r
  const double bracket = (std::pow(p.r, 2.0 * t) - 1.0 + t) + 2.0 * p.r * p.r * log_r * (1.0 - t) * e;
  const double v = (1.0 - t) * p.c * bracket;
  if (v < 0.0) {
    if (v > -1e-12) return 0.0;
    throw NumericError("variance: negative result " + std::to_string(v) + " at t=" + std::to_string(t));
  }
  return v;
}

double stddev(double t, const BbedParams& p) { return std::sqrt(variance(t, p)); }

std::complex<double> drift(std::complex<double> x, std::complex<double> y, double t) {
  if (!(t < 1.0)) throw DomainError("drift: singular for t >= 1 (t=" + std::to_string(t) + ")");
  check_unit_interval(t, "drift");
  return (y - x) / (1.0 - t);
}

double diffusion(double t, const BbedParams& p) {
  check_unit_interval(t, "diffusion");
  return std::sqrt(p.c) * std::pow(p.r, t);
}

KernelValue perturbation_kernel(std::complex<double> x0, std::complex<double> y, double t, const BbedParams& p) {
  return {mean_evolution(x0, y, t), stddev(t, p)};
}

std::complex<double> sample_perturbation(std::complex<double> x0, std::complex<double> y, double t,
                                         const BbedParams& p, Rng& rng) {
  const auto k = perturbation_kernel(x0, y, t, p);
  const auto z = rng.complex_normal();
  return k.mean + k.std * z;
}

}  // namespace dbuf
