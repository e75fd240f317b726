#include "dbuf/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "dbuf/error.hpp"

namespace dbuf {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double ratio_db(double num, double den) {
  // No target energy scores the floor even when the residual vanishes too
  // (all-zero estimate).
  if (num <= 0.0) return -kMetricCapDb;
  if (den <= 0.0) return kMetricCapDb;
  return std::clamp(10.0 * std::log10(num / den), -kMetricCapDb, kMetricCapDb);
}

}  // namespace

double si_sdr(std::span<const double> estimate, std::span<const double> reference) {
  if (estimate.size() != reference.size() || reference.empty()) {
    throw ShapeError("si_sdr: signals must be non-empty and of equal length");
  }
  const double ss = dot(reference, reference);
  if (ss == 0.0) throw DomainError("si_sdr: reference is all zeros");
  const double alpha = dot(estimate, reference) / ss;
  double target = 0.0, err = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double t = alpha * reference[i];
    target += t * t;
    err += (t - estimate[i]) * (t - estimate[i]);
  }
  return ratio_db(target, err);
}

double si_sir(std::span<const double> estimate, std::span<const double> reference,
              std::span<const double> interference) {
  if (estimate.size() != reference.size() || estimate.size() != interference.size() || reference.empty()) {
    throw ShapeError("si_sir: signals must be non-empty and of equal length");
  }
  const double ss = dot(reference, reference);
  const double nn = dot(interference, interference);
  const double sn = dot(reference, interference);
  const double det = ss * nn - sn * sn;
  if (ss == 0.0 || nn == 0.0 || det <= 1e-12 * ss * nn) {
    throw DomainError("si_sir: reference and interference are linearly dependent");
  }
  const double es = dot(estimate, reference);
  const double en = dot(estimate, interference);
  // Normal equations of the 2-column least-squares projection.
  const double a = (nn * es - sn * en) / det;
  const double b = (ss * en - sn * es) / det;
  const double alpha = es / ss;
  double target = 0.0, interf = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double t = alpha * reference[i];
    const double e = a * reference[i] + b * interference[i] - t;
    target += t * t;
    interf += e * e;
  }
  return ratio_db(target, interf);
}

AlignedPair align_delayed(std::span<const double> delayed_estimate, std::span<const double> reference,
                          std::size_t shift) {
  AlignedPair p;
  if (shift >= delayed_estimate.size()) return p;
  const std::size_t n = std::min(delayed_estimate.size() - shift, reference.size());
  p.estimate.assign(delayed_estimate.begin() + static_cast<std::ptrdiff_t>(shift),
                    delayed_estimate.begin() + static_cast<std::ptrdiff_t>(shift + n));
  p.reference.assign(reference.begin(), reference.begin() + static_cast<std::ptrdiff_t>(n));
  return p;
}

}  // namespace dbuf
