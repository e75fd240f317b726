#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dbuf/rng.hpp"
#include "dbuf/sde_bbed.hpp"
#include "dbuf/spectral.hpp"

namespace dbuf {

// Ascending diffusion time-steps t_1 < ... < t_B with t_1 = epsilon and
// t_B = t_max.
class ScheduleVector {
 public:
  ScheduleVector() = default;
  // Validates the invariants; throws DomainError otherwise.
  explicit ScheduleVector(std::vector<double> steps);

  std::size_t size() const noexcept { return steps_.size(); }
  // 1-based access matching buffer-local indices; at(0) is the implicit t_0 = 0.
  double at(std::size_t i) const { return i == 0 ? 0.0 : steps_.at(i - 1); }
  std::span<const double> steps() const noexcept { return steps_; }

  friend bool operator==(const ScheduleVector&, const ScheduleVector&) = default;

 private:
  std::vector<double> steps_;
};

ScheduleVector inference_schedule(std::size_t buffer_len, const BbedParams& p);
// Endpoints pinned; the B - 2 interior points are i.i.d. uniform on
// (epsilon, t_max), sorted, with ties redrawn.
ScheduleVector training_schedule(std::size_t buffer_len, const BbedParams& p, Rng& rng);

struct LatencyReport {
  double algorithmic_latency = 0.0;  // seconds
  double hop_time = 0.0;             // seconds
  double total_latency = 0.0;        // algorithmic + hop
  double rtf = 0.0;                  // mean step time / hop time
  double max_rtf = 0.0;
  std::size_t delay_frames = 0;
  std::size_t frames = 0;
  std::size_t network_calls = 0;
  std::string mode;

  bool realtime_ok() const noexcept { return rtf < 1.0; }
  std::string to_json() const;
};

// n_fft / f_s + d * hop / f_s
double algorithmic_latency(const StftConfig& cfg, std::size_t delay_frames);
double real_time_factor(double proc_time, const StftConfig& cfg);
LatencyReport make_latency_report(const StftConfig& cfg, std::size_t delay_frames, double proc_time);

}  // namespace dbuf
