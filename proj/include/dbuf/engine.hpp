#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dbuf/rng.hpp"
#include "dbuf/schedule.hpp"
#include "dbuf/sde_bbed.hpp"
#include "dbuf/spectral.hpp"
#include "dbuf/unet.hpp"

namespace dbuf {

enum class EngineMode { Predictive, DbDsm, DbDp };
const char* to_string(EngineMode m) noexcept;
EngineMode parse_engine_mode(const std::string& s);

struct EngineConfig {
  EngineMode mode = EngineMode::DbDp;
  std::size_t K = 64;  // chunk length in frames
  std::size_t B = 16;  // buffer length (diffusion modes)
  std::size_t d = 0;   // output delay (predictive and db-dp)
  BbedParams bbed;
  StftConfig stft;
  std::uint64_t seed = 0;

  void validate() const;
  // Emitted-frame delay in frames: B - 1 for db-dsm, d otherwise.
  std::size_t delay() const noexcept { return mode == EngineMode::DbDsm ? B - 1 : d; }
};

// Diffusion-mode network: V, Y (F x K, compressed) and the schedule -> F x B.
class BufferModel {
 public:
  virtual ~BufferModel() = default;
  virtual ComplexMatrix evaluate(const ComplexMatrix& V, const ComplexMatrix& Y, const ScheduleVector& t) = 0;
};

// Predictive-mode network: Y chunk (F x K) -> F x K estimate.
class ChunkModel {
 public:
  virtual ~ChunkModel() = default;
  virtual ComplexMatrix evaluate(const ComplexMatrix& Y) = 0;
};

class UNetBufferModel final : public BufferModel {
 public:
  explicit UNetBufferModel(const UNet& net) : net_(net) {}
  ComplexMatrix evaluate(const ComplexMatrix& V, const ComplexMatrix& Y, const ScheduleVector& t) override {
    return net_.forward_diffusion(V, Y, t);
  }

 private:
  const UNet& net_;
};

class UNetChunkModel final : public ChunkModel {
 public:
  explicit UNetChunkModel(const UNet& net) : net_(net) {}
  ComplexMatrix evaluate(const ComplexMatrix& Y) override { return net_.forward_predictive(Y); }

 private:
  const UNet& net_;
};

// Returns the clean frames under the buffer (data prediction), or the exact
// score of the perturbation kernel around them. `clean` is the compressed
// clean spectrogram of the whole stream; frames beyond it count as zero.
class OracleBufferModel final : public BufferModel {
 public:
  enum class Target { Data, Score };
  OracleBufferModel(ComplexMatrix clean, Target target, BbedParams p)
      : clean_(std::move(clean)), target_(target), p_(p) {}
  ComplexMatrix evaluate(const ComplexMatrix& V, const ComplexMatrix& Y, const ScheduleVector& t) override;

 private:
  ComplexMatrix clean_;
  Target target_;
  BbedParams p_;
  std::size_t calls_ = 0;
};

class ZeroBufferModel final : public BufferModel {
 public:
  ComplexMatrix evaluate(const ComplexMatrix& V, const ComplexMatrix&, const ScheduleVector& t) override {
    return ComplexMatrix(V.bins(), t.size());
  }
};

// x - [f(x, y) - g(t_hi)^2 score] dt + g(t_hi) sqrt(dt) z, dt = t_hi - t_lo.
cplx reverse_step_eum(cplx x, cplx y, cplx score, double t_hi, double t_lo, const BbedParams& p, Rng& rng);
// mu_{t_lo}(x0_hat, y) + sigma_{t_lo} z.
cplx reverse_step_dp(cplx x0_hat, cplx y, double t_lo, const BbedParams& p, Rng& rng);

// Chunk-based predictive processing: one model call per frame, emits the
// d-th last output frame.
class ChunkProcessor {
 public:
  ChunkProcessor(const EngineConfig& cfg, ChunkModel& model);
  std::vector<cplx> step(std::span<const cplx> frame);

  std::size_t calls() const noexcept { return calls_; }
  std::size_t frames_seen() const noexcept { return frames_; }
  const ComplexMatrix& chunk() const noexcept { return Yc_; }

 private:
  EngineConfig cfg_;
  ChunkModel& model_;
  ComplexMatrix Yc_;
  std::size_t calls_ = 0;
  std::size_t frames_ = 0;
};

// The Diffusion Buffer state machine. The last B of the K frames of V sit at
// diffusion times t_1..t_B (oldest to newest); every step pops the oldest
// frame, appends the new noisy frame at t_B and moves each buffer frame one
// step down the schedule with a single network call.
class DiffusionBuffer {
 public:
  DiffusionBuffer(const EngineConfig& cfg, BufferModel& model);
  DiffusionBuffer(const EngineConfig& cfg, BufferModel& model, ScheduleVector schedule);

  std::vector<cplx> step(std::span<const cplx> R);

  std::size_t calls() const noexcept { return calls_; }
  std::size_t frames_seen() const noexcept { return frames_; }
  const ComplexMatrix& V() const noexcept { return V_; }
  const ComplexMatrix& Yc() const noexcept { return Yc_; }
  const ScheduleVector& schedule() const noexcept { return schedule_; }
  // Network output of the most recent step (F x B).
  const ComplexMatrix& last_output() const noexcept { return O_; }
  // Reverse steps taken by the frame emitted on the most recent step.
  std::size_t emitted_residency() const noexcept;
  // Output frame for a given delay from the most recent step; db-dp only.
  std::vector<cplx> output_for_delay(std::size_t d) const;

 private:
  EngineConfig cfg_;
  BufferModel& model_;
  ScheduleVector schedule_;
  ComplexMatrix V_;
  ComplexMatrix Yc_;
  ComplexMatrix O_;
  std::vector<std::size_t> steps_;  // reverse steps applied to each column of V
  std::size_t calls_ = 0;
  std::size_t frames_ = 0;
};

struct StreamResult {
  std::vector<double> samples;  // input length + delay * hop; output sample s matches input s - delay * hop
  std::size_t delay_frames = 0;
  LatencyReport report;
};

// analyze -> compress -> per-frame engine step -> decompress -> synthesize.
// N input frames take N + delay steps; the tail is flushed with silence.
StreamResult run_stream(std::span<const double> samples, const EngineConfig& cfg, BufferModel& model);
StreamResult run_stream(std::span<const double> samples, const EngineConfig& cfg, ChunkModel& model);
// One db-dp trajectory scored at several delays; the state does not depend on d.
std::vector<StreamResult> run_stream_dp_delays(std::span<const double> samples, const EngineConfig& cfg,
                                               BufferModel& model, const std::vector<std::size_t>& delays);

// Compressed spectrogram of a signal as the engine sees it, including
// `flush` trailing frames of silence.
ComplexMatrix stream_spectrogram(std::span<const double> samples, const StftConfig& cfg, std::size_t flush = 0);

}  // namespace dbuf
