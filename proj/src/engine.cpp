#include "dbuf/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "dbuf/error.hpp"

namespace dbuf {

const char* to_string(EngineMode m) noexcept {
  switch (m) {
    case EngineMode::Predictive: return "predictive";
    case EngineMode::DbDsm: return "db-dsm";
    case EngineMode::DbDp: return "db-dp";
  }
  return "?";
}

EngineMode parse_engine_mode(const std::string& s) {
  if (s == "predictive") return EngineMode::Predictive;
  if (s == "db-dsm") return EngineMode::DbDsm;
  if (s == "db-dp") return EngineMode::DbDp;
  throw ConfigError("unknown engine mode '" + s + "' (predictive | db-dsm | db-dp)");
}

void EngineConfig::validate() const {
  stft.validate();
  bbed.validate();
  if (K == 0) throw ConfigError("engine: K must be positive");
  if (mode == EngineMode::Predictive) {
    if (d >= K) throw ConfigError("engine: d must be < K");
    return;
  }
  if (B < 2) throw ConfigError("engine: B must be >= 2");
  if (K < B) throw ConfigError("engine: K must be >= B");
  if (mode == EngineMode::DbDp && d >= B) {
    throw ConfigError("engine: d=" + std::to_string(d) + " must be < B=" + std::to_string(B));
  }
}

ComplexMatrix OracleBufferModel::evaluate(const ComplexMatrix& V, const ComplexMatrix& Y, const ScheduleVector& t) {
  const std::size_t B = t.size();
  const std::size_t K = V.frames();
  const std::size_t F = V.bins();
  if (clean_.frames() > 0 && clean_.bins() != F) throw ShapeError("oracle: clean spectrogram has wrong bin count");
  // Call c sees stream frames c - B + 1 .. c in the buffer.
  const long newest = static_cast<long>(calls_++);
  ComplexMatrix out(F, B);
  for (std::size_t j = 0; j < B; ++j) {
    const long idx = newest - static_cast<long>(B - 1 - j);
    const bool inside = idx >= 0 && static_cast<std::size_t>(idx) < clean_.frames();
    for (std::size_t f = 0; f < F; ++f) {
      const cplx x0 = inside ? clean_(f, static_cast<std::size_t>(idx)) : cplx{};
      if (target_ == Target::Data) {
        out(f, j) = x0;
      } else {
        const double tj = t.at(j + 1);
        const std::size_t k = K - B + j;
        out(f, j) = -(V(f, k) - mean_evolution(x0, Y(f, k), tj)) / variance(tj, p_);
      }
    }
  }
  return out;
}

cplx reverse_step_eum(cplx x, cplx y, cplx score, double t_hi, double t_lo, const BbedParams& p, Rng& rng) {
  if (!(t_lo >= 0.0 && t_lo <= t_hi)) throw DomainError("reverse_step_eum: need 0 <= t_lo <= t_hi");
  const double dt = t_hi - t_lo;
  const cplx f = drift(x, y, t_hi);
  const double g = diffusion(t_hi, p);
  const cplx z = rng.complex_normal();
  return x - (f - g * g * score) * dt + g * std::sqrt(dt) * z;
}

cplx reverse_step_dp(cplx x0_hat, cplx y, double t_lo, const BbedParams& p, Rng& rng) {
  const cplx z = rng.complex_normal();
  return mean_evolution(x0_hat, y, t_lo) + stddev(t_lo, p) * z;
}

ChunkProcessor::ChunkProcessor(const EngineConfig& cfg, ChunkModel& model)
    : cfg_(cfg), model_(model), Yc_(cfg.stft.bins(), cfg.K) {
  cfg_.validate();
  if (cfg_.mode != EngineMode::Predictive) throw StateError("chunk processor needs predictive mode");
}

std::vector<cplx> ChunkProcessor::step(std::span<const cplx> frame) {
  Yc_.shift_in(frame);
  ++frames_;
  const ComplexMatrix O = model_.evaluate(Yc_);
  ++calls_;
  if (O.frames() != cfg_.K || O.bins() != Yc_.bins()) throw ShapeError("chunk model returned the wrong shape");
  const auto col = O.frame(cfg_.K - 1 - cfg_.d);
  return {col.begin(), col.end()};
}

DiffusionBuffer::DiffusionBuffer(const EngineConfig& cfg, BufferModel& model)
    : DiffusionBuffer(cfg, model, inference_schedule(cfg.B, cfg.bbed)) {}

DiffusionBuffer::DiffusionBuffer(const EngineConfig& cfg, BufferModel& model, ScheduleVector schedule)
    : cfg_(cfg),
      model_(model),
      schedule_(std::move(schedule)),
      V_(cfg.stft.bins(), cfg.K),
      Yc_(cfg.stft.bins(), cfg.K),
      steps_(cfg.K, 0) {
  cfg_.validate();
  if (cfg_.mode == EngineMode::Predictive) throw StateError("diffusion buffer needs db-dsm or db-dp mode");
  if (schedule_.size() != cfg_.B) throw StateError("diffusion buffer: schedule length differs from B");
}

std::vector<cplx> DiffusionBuffer::step(std::span<const cplx> R) {
  const std::size_t F = V_.bins();
  const std::size_t K = cfg_.K;
  const std::size_t B = cfg_.B;
  if (R.size() != F) throw ShapeError("db_step: frame has wrong bin count");
  const std::uint64_t frame = frames_++;

  Yc_.shift_in(R);
  std::vector<cplx> noisy(R.begin(), R.end());
  {
    Rng rng(mix_seed(cfg_.seed, frame, 0));
    const double s = stddev(schedule_.at(B), cfg_.bbed);
    for (auto& v : noisy) v += s * rng.complex_normal();
  }
  V_.shift_in(noisy);
  std::rotate(steps_.begin(), steps_.begin() + 1, steps_.end());
  steps_.back() = 0;

  O_ = model_.evaluate(V_, Yc_, schedule_);
  ++calls_;
  if (O_.frames() != B || O_.bins() != F) throw ShapeError("buffer model returned the wrong shape");

  for (std::size_t i = 1; i <= B; ++i) {
    const std::size_t k = K - B + i - 1;
    const double t_hi = schedule_.at(i);
    const double t_lo = schedule_.at(i - 1);
    Rng rng(mix_seed(cfg_.seed, frame, i));
    for (std::size_t f = 0; f < F; ++f) {
      cplx& x = V_(f, k);
      if (cfg_.mode == EngineMode::DbDsm) {
        x = reverse_step_eum(x, Yc_(f, k), O_(f, i - 1), t_hi, t_lo, cfg_.bbed, rng);
      } else {
        x = reverse_step_dp(O_(f, i - 1), Yc_(f, k), t_lo, cfg_.bbed, rng);
      }
    }
    ++steps_[k];
  }

  if (cfg_.mode == EngineMode::DbDsm) {
    const auto col = V_.frame(K - B);
    return {col.begin(), col.end()};
  }
  return output_for_delay(cfg_.d);
}

std::size_t DiffusionBuffer::emitted_residency() const noexcept {
  return cfg_.mode == EngineMode::DbDsm ? steps_[cfg_.K - cfg_.B] : steps_[cfg_.K - 1 - cfg_.d];
}

std::vector<cplx> DiffusionBuffer::output_for_delay(std::size_t d) const {
  if (cfg_.mode != EngineMode::DbDp) throw StateError("output_for_delay: db-dp only");
  if (d >= cfg_.B) throw ConfigError("output_for_delay: d must be < B");
  if (O_.frames() == 0) throw StateError("output_for_delay: no step taken yet");
  const auto col = O_.frame(cfg_.B - 1 - d);
  return {col.begin(), col.end()};
}

ComplexMatrix stream_spectrogram(std::span<const double> samples, const StftConfig& cfg, std::size_t flush) {
  cfg.validate();
  const std::size_t N = (samples.size() + cfg.hop - 1) / cfg.hop;
  StreamingAnalyzer analyzer(cfg);
  ComplexMatrix out(cfg.bins(), N + flush);
  std::vector<double> hop(cfg.hop);
  for (std::size_t k = 0; k < N + flush; ++k) {
    std::fill(hop.begin(), hop.end(), 0.0);
    const std::size_t start = k * cfg.hop;
    if (start < samples.size()) {
      const std::size_t take = std::min(cfg.hop, samples.size() - start);
      std::copy_n(samples.begin() + static_cast<std::ptrdiff_t>(start), take, hop.begin());
    }
    const auto frame = analyzer.push_hop(hop);
    auto dst = out.frame(k);
    for (std::size_t f = 0; f < frame.size(); ++f) dst[f] = compress_coefficient(frame[f], cfg.beta, cfg.alpha);
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

struct Timing {
  double total = 0.0;
  double worst = 0.0;
  std::size_t steps = 0;
  void add(double s) {
    total += s;
    worst = std::max(worst, s);
    ++steps;
  }
  double mean() const { return steps ? total / static_cast<double>(steps) : 0.0; }
};

// Runs `steps` engine steps over the stream; `emit(k)` is called after step k.
template <class Step, class Emit>
Timing drive(std::span<const double> samples, const StftConfig& cfg, std::size_t steps, Step&& step, Emit&& emit) {
  StreamingAnalyzer analyzer(cfg);
  std::vector<double> hop(cfg.hop);
  Timing timing;
  for (std::size_t k = 0; k < steps; ++k) {
    std::fill(hop.begin(), hop.end(), 0.0);
    const std::size_t start = k * cfg.hop;
    if (start < samples.size()) {
      const std::size_t take = std::min(cfg.hop, samples.size() - start);
      std::copy_n(samples.begin() + static_cast<std::ptrdiff_t>(start), take, hop.begin());
    }
    const auto t0 = Clock::now();
    auto frame = analyzer.push_hop(hop);
    for (auto& v : frame) v = compress_coefficient(v, cfg.beta, cfg.alpha);
    step(frame);
    timing.add(std::chrono::duration<double>(Clock::now() - t0).count());
    emit(k);
  }
  return timing;
}

StreamResult finish(const ComplexMatrix& compressed, std::size_t input_len, std::size_t delay, const StftConfig& cfg,
                    const Timing& timing, std::size_t calls, EngineMode mode) {
  Spectrogram spec{compressed, true};
  auto samples = synthesize_stream(decompress(spec, cfg), cfg);
  samples.resize(input_len + delay * cfg.hop, 0.0);
  for (double v : samples) {
    if (!std::isfinite(v)) throw NumericError("run_stream: non-finite output sample");
  }
  StreamResult r;
  r.samples = std::move(samples);
  r.delay_frames = delay;
  r.report = make_latency_report(cfg, delay, timing.mean());
  r.report.max_rtf = real_time_factor(timing.worst, cfg);
  r.report.frames = timing.steps;
  r.report.network_calls = calls;
  r.report.mode = to_string(mode);
  return r;
}

std::size_t frame_count(std::span<const double> samples, const StftConfig& cfg) {
  return (samples.size() + cfg.hop - 1) / cfg.hop;
}

}  // namespace

StreamResult run_stream(std::span<const double> samples, const EngineConfig& cfg, BufferModel& model) {
  DiffusionBuffer db(cfg, model);
  const std::size_t delay = cfg.delay();
  const std::size_t steps = frame_count(samples, cfg.stft) + delay;
  ComplexMatrix out(cfg.stft.bins(), steps);
  std::vector<cplx> last;
  auto timing = drive(samples, cfg.stft, steps, [&](const std::vector<cplx>& f) { last = db.step(f); },
                      [&](std::size_t k) { std::copy(last.begin(), last.end(), out.frame(k).begin()); });
  return finish(out, samples.size(), delay, cfg.stft, timing, db.calls(), cfg.mode);
}

StreamResult run_stream(std::span<const double> samples, const EngineConfig& cfg, ChunkModel& model) {
  ChunkProcessor cp(cfg, model);
  const std::size_t delay = cfg.delay();
  const std::size_t steps = frame_count(samples, cfg.stft) + delay;
  ComplexMatrix out(cfg.stft.bins(), steps);
  std::vector<cplx> last;
  auto timing = drive(samples, cfg.stft, steps, [&](const std::vector<cplx>& f) { last = cp.step(f); },
                      [&](std::size_t k) { std::copy(last.begin(), last.end(), out.frame(k).begin()); });
  return finish(out, samples.size(), delay, cfg.stft, timing, cp.calls(), cfg.mode);
}

std::vector<StreamResult> run_stream_dp_delays(std::span<const double> samples, const EngineConfig& cfg,
                                               BufferModel& model, const std::vector<std::size_t>& delays) {
  if (cfg.mode != EngineMode::DbDp) throw ConfigError("run_stream_dp_delays: db-dp mode only");
  if (delays.empty()) return {};
  const std::size_t max_d = *std::max_element(delays.begin(), delays.end());
  for (auto d : delays) {
    if (d >= cfg.B) throw ConfigError("run_stream_dp_delays: d must be < B");
  }
  DiffusionBuffer db(cfg, model);
  const std::size_t N = frame_count(samples, cfg.stft);
  const std::size_t steps = N + max_d;
  std::vector<ComplexMatrix> outs;
  for (auto d : delays) outs.emplace_back(cfg.stft.bins(), N + d);
  auto timing = drive(samples, cfg.stft, steps, [&](const std::vector<cplx>& f) { db.step(f); },
                      [&](std::size_t k) {
                        for (std::size_t i = 0; i < delays.size(); ++i) {
                          if (k >= N + delays[i]) continue;
                          const auto col = db.output_for_delay(delays[i]);
                          std::copy(col.begin(), col.end(), outs[i].frame(k).begin());
                        }
                      });
  std::vector<StreamResult> results;
  for (std::size_t i = 0; i < delays.size(); ++i) {
    results.push_back(finish(outs[i], samples.size(), delays[i], cfg.stft, timing, db.calls(), cfg.mode));
  }
  return results;
}

}  // namespace dbuf
