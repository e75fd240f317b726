#pragma once

#include <span>
#include <vector>

namespace dbuf {

inline constexpr double kMetricCapDb = 100.0;

// Scale-invariant SDR in dB, capped at +100.
double si_sdr(std::span<const double> estimate, std::span<const double> reference);
// Scale-invariant SIR in dB: the estimate is projected onto span{reference,
// interference}; target = projection onto the reference alone, interference
// = the rest of the projection. Clamped to [-100, 100].
double si_sir(std::span<const double> estimate, std::span<const double> reference,
              std::span<const double> interference);

// Drops the first `shift` samples of a delayed estimate and trims both
// signals to their common length, so that out[i] lines up with ref[i].
struct AlignedPair {
  std::vector<double> estimate;
  std::vector<double> reference;
};
AlignedPair align_delayed(std::span<const double> delayed_estimate, std::span<const double> reference,
                          std::size_t shift);

}  // namespace dbuf
