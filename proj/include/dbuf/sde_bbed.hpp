#pragma once

#include <complex>

#include "dbuf/rng.hpp"

namespace dbuf {

// Brownian bridge with exponential diffusion. `r` is the exponential base of
// the diffusion coefficient; the experimental literature sometimes calls it k.
struct BbedParams {
  double c = 0.08;
  double r = 2.6;
  double t_max = 0.999;
  double epsilon = 0.03;  // smallest diffusion time-step in a schedule

  void validate() const;
};

struct KernelValue {
  std::complex<double> mean;
  double std = 0.0;
};

// Principal-value exponential integral Ei(x). Throws DomainError at x = 0.
double exp_integral_ei(double x);

// (1 - t) x0 + t y; t must lie in [0, 1].
std::complex<double> mean_evolution(std::complex<double> x0, std::complex<double> y, double t);
// Closed-form sigma^2(t) of the perturbation kernel.
double variance(double t, const BbedParams& p);
double stddev(double t, const BbedParams& p);
// (y - x) / (1 - t); undefined at t = 1.
std::complex<double> drift(std::complex<double> x, std::complex<double> y, double t);
// sqrt(c) r^t.
double diffusion(double t, const BbedParams& p);

KernelValue perturbation_kernel(std::complex<double> x0, std::complex<double> y, double t, const BbedParams& p);
// Draws X_t = mu_t(x0, y) + sigma_t z with z ~ N_C(0, 1).
std::complex<double> sample_perturbation(std::complex<double> x0, std::complex<double> y, double t,
                                         const BbedParams& p, Rng& rng);

}  // namespace dbuf
