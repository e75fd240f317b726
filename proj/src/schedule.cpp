#include "dbuf/schedule.hpp"

#include <algorithm>
#include <json.hpp>

#include "dbuf/error.hpp"

namespace dbuf {

ScheduleVector::ScheduleVector(std::vector<double> steps) : steps_(std::move(steps)) {
  if (steps_.empty()) throw DomainError("schedule: empty");
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    if (!(steps_[i] > 0.0 && steps_[i] < 1.0)) throw DomainError("schedule: step outside (0, 1)");
    if (i > 0 && !(steps_[i] > steps_[i - 1])) throw DomainError("schedule: not strictly ascending");
  }
}

ScheduleVector inference_schedule(std::size_t buffer_len, const BbedParams& p) {
  p.validate();
  if (buffer_len < 2) throw DomainError("inference_schedule: buffer length must be >= 2");
  std::vector<double> steps(buffer_len);
  const double span = p.t_max - p.epsilon;
  const double denom = static_cast<double>(buffer_len - 1);
  for (std::size_t i = 0; i < buffer_len; ++i) {
    steps[i] = p.epsilon + span * static_cast<double>(i) / denom;
  }
  steps.back() = p.t_max;
  return ScheduleVector(std::move(steps));
}

ScheduleVector training_schedule(std::size_t buffer_len, const BbedParams& p, Rng& rng) {
  p.validate();
  if (buffer_len < 2) throw DomainError("training_schedule: buffer length must be >= 2");
  std::vector<double> interior(buffer_len - 2);
  for (auto& v : interior) v = rng.uniform(p.epsilon, p.t_max);
  for (;;) {
    std::sort(interior.begin(), interior.end());
    bool redrawn = false;
    for (std::size_t i = 0; i < interior.size(); ++i) {
      const double below = i == 0 ? p.epsilon : interior[i - 1];
      if (!(interior[i] > below) || (i + 1 == interior.size() && !(interior[i] < p.t_max))) {
        interior[i] = rng.uniform(p.epsilon, p.t_max);
        redrawn = true;
      }
    }
    if (!redrawn) break;
  }
  std::vector<double> steps;
  steps.reserve(buffer_len);
  steps.push_back(p.epsilon);
  steps.insert(steps.end(), interior.begin(), interior.end());
  steps.push_back(p.t_max);
  return ScheduleVector(std::move(steps));
}

double algorithmic_latency(const StftConfig& cfg, std::size_t delay_frames) {
  return static_cast<double>(cfg.n_fft) / cfg.sample_rate +
         static_cast<double>(delay_frames) * static_cast<double>(cfg.hop) / cfg.sample_rate;
}

double real_time_factor(double proc_time, const StftConfig& cfg) {
  if (!(proc_time >= 0.0)) throw DomainError("rtf: processing time must be non-negative");
  return proc_time / cfg.hop_time();
}

LatencyReport make_latency_report(const StftConfig& cfg, std::size_t delay_frames, double proc_time) {
  LatencyReport r;
  r.delay_frames = delay_frames;
  r.algorithmic_latency = algorithmic_latency(cfg, delay_frames);
  r.hop_time = cfg.hop_time();
  r.total_latency = r.algorithmic_latency + r.hop_time;
  r.rtf = real_time_factor(proc_time, cfg);
  r.max_rtf = r.rtf;
  return r;
}

std::string LatencyReport::to_json() const {
  nlohmann::json j;
  j["type"] = "latency";
  j["mode"] = mode;
  j["delay_frames"] = delay_frames;
  j["algorithmic_latency_s"] = algorithmic_latency;
  j["algorithmic_latency_ms"] = algorithmic_latency * 1000.0;
  j["hop_time_s"] = hop_time;
  j["total_latency_s"] = total_latency;
  j["rtf"] = rtf;
  j["max_rtf"] = max_rtf;
  j["realtime_ok"] = realtime_ok();
  j["frames"] = frames;
  j["network_calls"] = network_calls;
  return j.dump();
}

}  // namespace dbuf
