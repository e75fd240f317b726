#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dbuf/dataset.hpp"
#include "dbuf/engine.hpp"
#include "dbuf/error.hpp"
#include "dbuf/losses.hpp"
#include "dbuf/metrics.hpp"
#include "support.hpp"

using namespace dbuf;

namespace {

class IdentityChunk final : public ChunkModel {
 public:
  ComplexMatrix evaluate(const ComplexMatrix& Y) override { return Y; }
};

// Counts calls and echoes the newest B frames of Y.
class EchoBuffer final : public BufferModel {
 public:
  std::size_t calls = 0;
  ComplexMatrix evaluate(const ComplexMatrix&, const ComplexMatrix& Y, const ScheduleVector& t) override {
    ++calls;
    return Y.slice_frames(Y.frames() - t.size(), t.size());
  }
};

std::vector<cplx> random_frame(std::size_t F, Rng& rng) {
  std::vector<cplx> f(F);
  for (auto& v : f) v = 0.4 * rng.complex_normal();
  return f;
}

// Two tones with a slow envelope plus white noise.
AudioPair test_pair(std::size_t n, std::uint64_t seed, double noise) {
  Rng rng(seed);
  AudioPair p;
  p.clean.resize(n);
  p.noisy.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / 16000.0;
    p.clean[i] = (0.3 * std::sin(2 * std::numbers::pi * 220 * t) + 0.2 * std::sin(2 * std::numbers::pi * 530 * t)) * (0.6 + 0.4 * std::sin(2 * std::numbers::pi * 2 * t));
    p.noisy[i] = p.clean[i] + noise * rng.normal();
  }
  return p;
}

}  // namespace

TEST_SUITE("engine") {
  TEST_CASE("identity chunk model delays frames by d") {
    StftConfig stft;
    for (std::size_t d : {0u, 3u, 9u}) {
      EngineConfig cfg;
      cfg.mode = EngineMode::Predictive;
      cfg.K = 16;
      cfg.d = d;
      IdentityChunk model;
      ChunkProcessor cp(cfg, model);
      Rng rng(d);
      std::vector<std::vector<cplx>> in;
      for (std::size_t k = 0; k < 40; ++k) {
        in.push_back(random_frame(stft.bins(), rng));
        const auto out = cp.step(in.back());
        if (k >= d) {
          CHECK(out == in[k - d]);
        } else {
          for (const auto& v : out) CHECK(v == cplx{});
        }
      }
      CHECK(cp.calls() == 40);
    }
  }

  TEST_CASE("identity stream reproduces the input delayed by d hops") {
    EngineConfig cfg;
    cfg.mode = EngineMode::Predictive;
    cfg.d = 9;
    IdentityChunk model;
    const auto x = dbtest::random_signal(16000, 4);
    const auto r = run_stream(x, cfg, model);
    REQUIRE(r.samples.size() == x.size() + 9 * 256);
    const auto a = align_delayed(r.samples, x, 9 * 256);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.reference.size(); ++i) worst = std::max(worst, std::abs(a.estimate[i] - a.reference[i]));
    CHECK(worst < 1e-9);
    CHECK(r.report.algorithmic_latency * 1000.0 == doctest::Approx(175.875));
    CHECK(std::abs(r.report.algorithmic_latency * 1000.0 - 176.0) < 1.0);
    CHECK(r.report.network_calls == r.report.frames);
  }

  TEST_CASE("zero stream gives zero output") {
    EngineConfig cfg;
    cfg.mode = EngineMode::Predictive;
    cfg.K = 8;
    IdentityChunk model;
    const std::vector<double> zeros(5000, 0.0);
    for (double v : run_stream(zeros, cfg, model).samples) CHECK(v == 0.0);
    cfg.mode = EngineMode::DbDp;
    cfg.K = 64;
    ZeroBufferModel zm;
    for (double v : run_stream(zeros, cfg, zm).samples) CHECK(v == 0.0);
    // Score-free DSM only injects and propagates noise; it stays finite.
    cfg.mode = EngineMode::DbDsm;
    for (double v : run_stream(zeros, cfg, zm).samples) CHECK(std::isfinite(v));
  }

  TEST_CASE("exactly one network call per frame") {
    StftConfig stft;
    for (auto mode : {EngineMode::DbDsm, EngineMode::DbDp}) {
      EngineConfig cfg;
      cfg.mode = mode;
      cfg.d = 4;
      EchoBuffer model;
      DiffusionBuffer db(cfg, model);
      Rng rng(1);
      for (std::size_t k = 0; k < 500; ++k) db.step(random_frame(stft.bins(), rng));
      CHECK(db.calls() == 500);
      CHECK(model.calls == 500);
      CHECK(db.frames_seen() == 500);
    }
    EngineConfig cfg;
    cfg.mode = EngineMode::DbDp;
    EchoBuffer model;
    const auto r = run_stream(dbtest::random_signal(500 * 256, 2), cfg, model);
    CHECK(r.report.network_calls == 500);
    CHECK(model.calls == 500);
  }

  TEST_CASE("emitted frames have been in the buffer for the right number of steps") {
    StftConfig stft;
    Rng rng(3);
    {
      EngineConfig cfg;
      cfg.mode = EngineMode::DbDsm;
      EchoBuffer model;
      DiffusionBuffer db(cfg, model);
      for (std::size_t k = 0; k < 80; ++k) {
        db.step(random_frame(stft.bins(), rng));
        // Frame k - (B - 1) is emitted; before it exists the column is padding.
        if (k >= cfg.B - 1) CHECK(db.emitted_residency() == cfg.B);
      }
    }
    for (std::size_t d : {0u, 5u, 15u}) {
      EngineConfig cfg;
      cfg.mode = EngineMode::DbDp;
      cfg.d = d;
      EchoBuffer model;
      DiffusionBuffer db(cfg, model);
      for (std::size_t k = 0; k < 40; ++k) {
        db.step(random_frame(stft.bins(), rng));
        if (k >= d) CHECK(db.emitted_residency() == d + 1);
      }
    }
  }

  TEST_CASE("reverse steps") {
    BbedParams p;
    Rng rng(4);
    const cplx x(0.3, -0.1), y(0.7, 0.2);
    // No time step, no change.
    CHECK(reverse_step_eum(x, y, cplx(1.0, 1.0), 0.4, 0.4, p, rng) == x);
    // Negligible diffusion: a plain Euler step of the drift.
    BbedParams quiet{1e-40, 2.6, 0.999, 0.03};
    const auto xe = reverse_step_eum(x, y, 0.0, 0.5, 0.4, quiet, rng);
    CHECK(std::abs(xe - (x - (y - x) / 0.5 * 0.1)) < 1e-15);
    CHECK_THROWS_AS(reverse_step_eum(x, y, 0.0, 0.4, 0.5, p, rng), DomainError);
    CHECK_THROWS_AS(reverse_step_eum(x, y, 0.0, 1.0, 0.5, p, rng), DomainError);

    CHECK(reverse_step_dp(x, y, 0.0, p, rng) == x);
    CHECK(reverse_step_dp(x, y, 1.0, p, rng) == y);
  }

  TEST_CASE("data-prediction step samples the perturbation kernel") {
    BbedParams p;
    Rng rng(5);
    const cplx x0(0.6, 0.2), y(-0.3, 0.5);
    const auto k = perturbation_kernel(x0, y, 0.5, p);
    const int n = 100000;
    cplx sum = 0.0;
    double sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const auto v = reverse_step_dp(x0, y, 0.5, p, rng);
      sum += v;
      sq += std::norm(v - k.mean);
    }
    const double var = k.std * k.std;
    const double se = std::sqrt(var / 2.0 / n);
    CHECK(std::abs((sum / double(n)).real() - k.mean.real()) < 4 * se);
    CHECK(std::abs((sum / double(n)).imag() - k.mean.imag()) < 4 * se);
    CHECK(std::abs(sq / n - var) < 4 * var / std::sqrt(double(n)));
  }

  TEST_CASE("true score moves samples toward the clean value") {
    BbedParams p;
    Rng rng(6);
    const cplx x0(0.5, -0.2), y(0.1, 0.4);
    const double t_hi = 0.6, t_lo = 0.55;
    const auto kern = perturbation_kernel(x0, y, t_hi, p);
    double before = 0.0, after = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const cplx z = rng.complex_normal();
      const cplx xt = kern.mean + kern.std * z;
      const cplx score = -z / kern.std;
      const cplx xn = reverse_step_eum(xt, y, score, t_hi, t_lo, p, rng);
      before += std::norm(xt - x0);
      after += std::norm(xn - x0);
    }
    CHECK(after < before);
  }

  TEST_CASE("fresh stream matches the zero-padded training layout") {
    StftConfig stft;
    const auto pair = test_pair(40 * 256, 7, 0.05);
    const auto C = stream_spectrogram(pair.clean, stft);
    const auto N = stream_spectrogram(pair.noisy, stft);
    EngineConfig cfg;
    cfg.K = 24;
    cfg.B = 8;
    OracleBufferModel oracle(C, OracleBufferModel::Target::Data, cfg.bbed);
    DiffusionBuffer db(cfg, oracle);
    Rng rng(8);
    for (std::size_t k = 0; k + 1 < cfg.K; ++k) {
      db.step(N.frame(k));
      const auto batch = build_batch(C, N, cfg.K, cfg.B, cfg.bbed, rng, static_cast<long>(k));
      CHECK(db.Yc() == unstack_complex(batch.Y));
      // With an exact denoiser every frame that left the buffer is clean.
      const auto X0 = unstack_complex(batch.X0);
      CHECK(db.V().slice_frames(0, cfg.K - cfg.B) == X0.slice_frames(0, cfg.K - cfg.B));
    }
  }

  TEST_CASE("oracle denoiser end to end") {
    const auto pair = test_pair(16000, 9, 0.1);
    StftConfig stft;
    EngineConfig cfg;
    OracleBufferModel oracle(stream_spectrogram(pair.clean, stft, cfg.B), OracleBufferModel::Target::Data, cfg.bbed);
    const auto res = run_stream_dp_delays(pair.noisy, cfg, oracle, {0, cfg.B - 1});
    const double noisy = si_sdr(pair.noisy, pair.clean);
    const auto a0 = align_delayed(res[0].samples, pair.clean, 0);
    const auto a1 = align_delayed(res[1].samples, pair.clean, (cfg.B - 1) * 256);
    CHECK(si_sdr(a1.estimate, a1.reference) > 40.0);
    CHECK(si_sdr(a0.estimate, a0.reference) > noisy);
  }

  TEST_CASE("streams are reproducible under a seed") {
    const auto x = dbtest::random_signal(30 * 256, 10);
    EngineConfig cfg;
    cfg.mode = EngineMode::DbDsm;
    EchoBuffer m;
    const auto a = run_stream(x, cfg, m).samples;
    CHECK(run_stream(x, cfg, m).samples == a);
    cfg.seed = 1;
    CHECK_FALSE(run_stream(x, cfg, m).samples == a);
  }

  TEST_CASE("configuration and state errors") {
    EngineConfig cfg;
    cfg.K = 8;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);  // K < B
    cfg = EngineConfig{};
    cfg.d = 16;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = EngineConfig{};
    cfg.B = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = EngineConfig{};
    cfg.mode = EngineMode::Predictive;
    cfg.d = 64;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    EchoBuffer m;
    IdentityChunk c;
    EngineConfig pred;
    pred.mode = EngineMode::Predictive;
    CHECK_THROWS_AS(DiffusionBuffer(pred, m), StateError);
    CHECK_THROWS_AS(ChunkProcessor(EngineConfig{}, c), StateError);
    CHECK_THROWS_AS(DiffusionBuffer(EngineConfig{}, m, inference_schedule(8, BbedParams{})), StateError);
    DiffusionBuffer db(EngineConfig{}, m);
    CHECK_THROWS_AS(db.output_for_delay(0), StateError);
    CHECK_THROWS_AS(db.step(std::vector<cplx>(10)), ShapeError);
    EngineConfig dsm;
    dsm.mode = EngineMode::DbDsm;
    DiffusionBuffer ds(dsm, m);
    ds.step(std::vector<cplx>(256));
    CHECK_THROWS_AS(ds.output_for_delay(0), StateError);
    CHECK(parse_engine_mode("db-dsm") == EngineMode::DbDsm);
    CHECK_THROWS_AS(parse_engine_mode("dp"), ConfigError);
    CHECK(EngineConfig{.mode = EngineMode::DbDsm, .d = 3}.delay() == 15);
  }
}
