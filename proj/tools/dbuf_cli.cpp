// dbuf: command-line driver for the diffusion-buffer engine.
//
//   enhance   stream a WAV file through a trained network
//   probe     dependency matrix + block-causality check of a network config
//   train     toy training run from a manifest (resumable)
//   schedule  latency table and the inference schedule
//   synth     write a synthetic clean/noisy dataset with manifest
//   eval      SI-SDR of an enhanced file against its reference
//
// Exit codes: 0 ok, 1 check failed (probe), 2 usage/config, 3 data, 4 numeric.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dbuf/checkpoint.hpp"
#include "dbuf/dataset.hpp"
#include "dbuf/engine.hpp"
#include "dbuf/error.hpp"
#include "dbuf/kvconfig.hpp"
#include "dbuf/metrics.hpp"
#include "dbuf/probe.hpp"
#include "dbuf/schedule.hpp"
#include "dbuf/trainer.hpp"
#include "dbuf/wav.hpp"

namespace {

using namespace dbuf;

constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config:
    case ErrorKind::Domain:
      return kExitUsage;
    case ErrorKind::Data:
    case ErrorKind::Shape:
      return kExitData;
    case ErrorKind::Numeric:
    case ErrorKind::State:
      return kExitNumeric;
  }
  return kExitNumeric;
}

// ---- enhance ---------------------------------------------------------------

struct EnhanceArgs {
  std::string mode = "db-dp";
  std::string in, out, checkpoint, report;
  std::size_t K = 64, B = 16, d = 0;
  std::uint64_t seed = 0;
  bool raw_weights = false;
};

BbedParams bbed_from_checkpoint(const Checkpoint& ck) {
  if (!ck.meta.contains("train")) return {};
  try {
    return TrainConfig::from_json(ck.meta.at("train")).bbed;
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: bad training block: ") + e.what());
  }
}

int cmd_enhance(const EnhanceArgs& a) {
  EngineConfig cfg;
  cfg.mode = parse_engine_mode(a.mode);
  cfg.K = a.K;
  cfg.B = a.B;
  cfg.d = a.d;
  cfg.seed = a.seed;
  if (cfg.mode == EngineMode::DbDsm && a.d != 0 && a.d != a.B - 1) {
    throw ConfigError("enhance: db-dsm always emits with delay B-1; drop --d");
  }
  cfg.validate();

  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const UNet net = load_model(ck, !a.raw_weights);
  cfg.bbed = bbed_from_checkpoint(ck);
  const auto& ucfg = net.config();
  const bool predictive = cfg.mode == EngineMode::Predictive;
  if (predictive != (ucfg.mode == UNetMode::Predictive)) {
    throw ConfigError(std::string("enhance: mode ") + to_string(cfg.mode) + " needs a " +
                      (predictive ? "predictive" : "diffusion") + " checkpoint");
  }
  if (cfg.mode == EngineMode::DbDsm && ucfg.output == OutputKind::Mask) {
    throw ConfigError("enhance: a masking checkpoint predicts data, not a score; use db-dp");
  }
  if (!predictive && ucfg.buffer_len != cfg.B) {
    throw ConfigError("enhance: --B " + std::to_string(cfg.B) + " but the network was trained with B=" +
                      std::to_string(ucfg.buffer_len));
  }

  const auto samples = read_wav(a.in);
  StreamResult res;
  if (predictive) {
    UNetChunkModel model(net);
    res = run_stream(samples, cfg, model);
  } else {
    UNetBufferModel model(net);
    res = run_stream(samples, cfg, model);
  }
  write_wav(a.out, res.samples);

  const auto& r = res.report;
  std::printf("%s: %zu frames, %zu network calls, delay %zu frames, latency %.3f ms, rtf %.3f\n", r.mode.c_str(),
              r.frames, r.network_calls, r.delay_frames, r.algorithmic_latency * 1000.0, r.rtf);
  if (!a.report.empty()) {
    std::ofstream f(a.report, std::ios::app);
    if (!f) throw DataError("cannot open report " + a.report);
    auto j = nlohmann::json::parse(r.to_json());
    j["input"] = a.in;
    j["output"] = a.out;
    j["checkpoint"] = a.checkpoint;
    j["K"] = cfg.K;
    j["B"] = cfg.B;
    j["seed"] = cfg.seed;
    f << j.dump() << '\n';
  }
  return 0;
}

// ---- probe -----------------------------------------------------------------

struct ProbeArgs {
  std::string config, method = "gradient", out;
  std::size_t len = 43, freq = 16;
  std::uint64_t seed = 0;
  bool text = false;
};

int cmd_probe(const ProbeArgs& a) {
  const UNetConfig ucfg = unet_config_from(KvConfig::load(a.config));
  if (a.len == 0) throw ConfigError("probe: --len must be positive");
  std::size_t mult = 1;
  for (auto s : ucfg.freq_strides) mult *= s;
  if (a.freq % mult != 0) {
    std::fprintf(stderr, "note: --freq %zu is not a multiple of the frequency stride %zu\n", a.freq, mult);
  }
  const UNet net(ucfg);
  const auto dep = dependency_matrix(net, a.len, a.freq, parse_probe_method(a.method), a.seed);
  const auto rep = assert_block_causal(dep, ucfg.global_stride());
  if (!a.out.empty()) dep.write_pgm(a.out);
  if (a.text) std::fputs(dep.to_text().c_str(), stdout);
  std::printf("%s\n", rep.summary().c_str());
  return rep.passed() ? 0 : kExitCheckFailed;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  std::string loss = "dp", data, out, config, resume, loss_csv;
  std::size_t steps = 2000, batch = 4, K = 64, B = 16;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  bool quiet = false;
  bool cosine_lr = false;
};

int cmd_train(const TrainArgs& a, const CLI::App& sub) {
  const auto pairs = load_dataset(a.data);
  if (pairs.empty()) throw DataError("train: manifest " + a.data + " lists no pairs");

  std::optional<Checkpoint> ck;
  TrainConfig tc;
  UNetConfig ucfg;
  if (!a.resume.empty()) {
    ck = load_checkpoint(a.resume);
    try {
      tc = TrainConfig::from_json(ck->meta.at("train"));
      ucfg = UNetConfig::from_json(ck->meta.at("unet"));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("checkpoint: bad metadata: ") + e.what());
    }
    // Only the step budget may change on resume; anything else would break
    // the identical-continuation guarantee.
    for (const char* opt : {"--loss", "--batch", "--K", "--B", "--lr", "--cosine-lr", "--seed", "--config"}) {
      if (sub.count(opt) > 0) throw ConfigError(std::string("train: ") + opt + " cannot be changed when resuming");
    }
    tc.steps = a.steps;
  } else {
    tc.loss = parse_loss_kind(a.loss);
    tc.steps = a.steps;
    tc.batch = a.batch;
    tc.K = a.K;
    tc.B = a.B;
    tc.lr = a.lr;
    tc.cosine_lr = a.cosine_lr;
    tc.seed = a.seed;
    UNetConfig base;
    base.mode = tc.loss == LossKind::Mse ? UNetMode::Predictive : UNetMode::Diffusion;
    base.buffer_len = tc.B;
    if (!a.config.empty()) {
      const auto kv = KvConfig::load(a.config);
      ucfg = unet_config_from(kv, base);
      tc.bbed = bbed_params_from(kv);
    } else {
      ucfg = base;
    }
    tc.validate();
  }

  UNet net(ucfg);
  Trainer trainer(net, tc);
  if (ck) trainer.restore(*ck);
  if (trainer.step_count() >= tc.steps) {
    std::printf("checkpoint already at step %zu >= --steps %zu; nothing to do\n", trainer.step_count(), tc.steps);
  }

  const std::string csv = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
  const auto data = prepare_pairs(pairs, tc.stft);
  const std::size_t every = std::max<std::size_t>(1, tc.steps / 20);
  train_toy(trainer, data, csv, [&](const TrainLogRow& r) {
    if (!a.quiet && (r.step % every == 0 || r.step == tc.steps)) {
      std::printf("step %6zu  loss %.5f  smoothed %.5f\n", r.step, r.loss, r.ema_loss);
      std::fflush(stdout);
    }
  });
  save_checkpoint(a.out, trainer.to_checkpoint());
  std::printf("wrote %s (step %zu), loss curve %s\n", a.out.c_str(), trainer.step_count(), csv.c_str());
  return 0;
}

// ---- schedule --------------------------------------------------------------

struct ScheduleArgs {
  std::size_t B = 16;
  std::string config;
  bool json = false;
};

int cmd_schedule(const ScheduleArgs& a) {
  if (a.B < 2) throw ConfigError("schedule: --B must be at least 2");
  BbedParams p;
  if (!a.config.empty()) p = bbed_params_from(KvConfig::load(a.config));
  const StftConfig stft;
  const auto sched = inference_schedule(a.B, p);
  if (a.json) {
    nlohmann::json j;
    j["B"] = a.B;
    j["schedule"] = std::vector<double>(sched.steps().begin(), sched.steps().end());
    for (std::size_t d = 0; d < a.B; ++d) {
      j["latency_ms"].push_back(algorithmic_latency(stft, d) * 1000.0);
    }
    std::printf("%s\n", j.dump(2).c_str());
    return 0;
  }
  std::printf("%4s %8s %12s\n", "d", "steps", "latency_ms");
  for (std::size_t d = 0; d < a.B; ++d) {
    // frame emitted at delay d has been through B - d reverse steps
    std::printf("%4zu %8zu %12.3f\n", d, a.B - d, algorithmic_latency(stft, d) * 1000.0);
  }
  std::printf("schedule:");
  for (double t : sched.steps()) std::printf(" %.6f", t);
  std::printf("\n");
  return 0;
}

// ---- synth / eval ----------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t pairs = 64;
  double seconds = 2.0, snr_lo = -5.0, snr_hi = 10.0;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  if (a.pairs == 0) throw ConfigError("synth: --pairs must be positive");
  SynthOptions opt;
  opt.seconds = a.seconds;
  opt.snr_lo = a.snr_lo;
  opt.snr_hi = a.snr_hi;
  Rng rng(a.seed);
  const auto manifest = write_dataset(a.out, synth_dataset(a.pairs, rng, opt));
  std::printf("wrote %zu pairs, manifest %s\n", a.pairs, manifest.c_str());
  return 0;
}

struct EvalArgs {
  std::string ref, est, noisy;
  std::size_t delay_frames = 0;
};

int cmd_eval(const EvalArgs& a) {
  const auto ref = read_wav(a.ref);
  const auto est = read_wav(a.est);
  const StftConfig stft;
  const auto al = align_delayed(est, ref, a.delay_frames * stft.hop);
  if (al.estimate.empty()) throw DataError("eval: estimate shorter than its delay");
  nlohmann::json j;
  j["si_sdr_db"] = si_sdr(al.estimate, al.reference);
  if (!a.noisy.empty()) {
    const auto noisy = read_wav(a.noisy);
    if (noisy.size() != ref.size()) throw DataError("eval: noisy and reference lengths differ");
    const double base = si_sdr(noisy, ref);
    j["noisy_si_sdr_db"] = base;
    j["improvement_db"] = j["si_sdr_db"].get<double>() - base;
  }
  std::printf("%s\n", j.dump().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-buffer streaming speech enhancement"};
  app.require_subcommand(1);

  EnhanceArgs ea;
  auto* enh = app.add_subcommand("enhance", "Enhance a 16 kHz mono WAV file");
  enh->add_option("--mode", ea.mode, "predictive | db-dsm | db-dp")
      ->check(CLI::IsMember({"predictive", "db-dsm", "db-dp"}))
      ->capture_default_str();
  enh->add_option("--in", ea.in, "Input WAV")->required();
  enh->add_option("--out", ea.out, "Output WAV")->required();
  enh->add_option("--checkpoint", ea.checkpoint, "Trained checkpoint")->required();
  enh->add_option("--K", ea.K, "Chunk length in frames")->capture_default_str();
  enh->add_option("--B", ea.B, "Buffer length")->capture_default_str();
  enh->add_option("--d", ea.d, "Output delay in frames (d < B)")->capture_default_str();
  enh->add_option("--seed", ea.seed, "Sampler seed")->capture_default_str();
  enh->add_option("--report", ea.report, "Append a JSON-lines latency report");
  enh->add_flag("--raw-weights", ea.raw_weights, "Use the raw instead of the EMA weights");

  ProbeArgs pa;
  auto* prb = app.add_subcommand("probe", "Dependency matrix and block-causality check");
  prb->add_option("--config", pa.config, "Network config (TOML subset)")->required();
  prb->add_option("--len", pa.len, "Input frames")->capture_default_str();
  prb->add_option("--freq", pa.freq, "Frequency bins of the probe input")->capture_default_str();
  prb->add_option("--method", pa.method, "gradient | perturbation")
      ->check(CLI::IsMember({"gradient", "perturbation"}))
      ->capture_default_str();
  prb->add_option("--out", pa.out, "Write the dependency matrix as PGM");
  prb->add_option("--seed", pa.seed, "Probe input seed")->capture_default_str();
  prb->add_flag("--text", pa.text, "Print the matrix as text");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train on a clean/noisy manifest");
  trn->add_option("--loss", ta.loss, "dsm | dp | mse")->check(CLI::IsMember({"dsm", "dp", "mse"}))->capture_default_str();
  trn->add_option("--data", ta.data, "Manifest CSV")->required();
  trn->add_option("--steps", ta.steps, "Total optimizer steps")->capture_default_str();
  trn->add_option("--out", ta.out, "Output checkpoint")->required();
  trn->add_option("--config", ta.config, "Network/SDE config (TOML subset)");
  trn->add_option("--resume", ta.resume, "Continue from this checkpoint");
  trn->add_option("--loss-csv", ta.loss_csv, "Loss curve path (default: <out>.loss.csv)");
  trn->add_option("--batch", ta.batch, "Batch size")->capture_default_str();
  trn->add_option("--K", ta.K, "Frames per training example")->capture_default_str();
  trn->add_option("--B", ta.B, "Buffer length")->capture_default_str();
  trn->add_option("--lr", ta.lr, "Adam learning rate")->capture_default_str();
  trn->add_flag("--cosine-lr", ta.cosine_lr, "Anneal lr to lr/100 over --steps");
  trn->add_option("--seed", ta.seed, "Training seed")->capture_default_str();
  trn->add_flag("--quiet", ta.quiet, "No progress lines");

  ScheduleArgs sa;
  auto* sch = app.add_subcommand("schedule", "Latency table and inference schedule");
  sch->add_option("--B", sa.B, "Buffer length")->capture_default_str();
  sch->add_option("--config", sa.config, "SDE config with a [bbed] section");
  sch->add_flag("--json", sa.json, "JSON output");

  SynthArgs ya;
  auto* syn = app.add_subcommand("synth", "Write a synthetic dataset");
  syn->add_option("--out", ya.out, "Output directory")->required();
  syn->add_option("--pairs", ya.pairs, "Number of pairs")->capture_default_str();
  syn->add_option("--seconds", ya.seconds, "Length of each pair")->capture_default_str();
  syn->add_option("--snr-lo", ya.snr_lo, "Lowest SNR in dB")->capture_default_str();
  syn->add_option("--snr-hi", ya.snr_hi, "Highest SNR in dB")->capture_default_str();
  syn->add_option("--seed", ya.seed, "Generator seed")->capture_default_str();

  EvalArgs va;
  auto* evl = app.add_subcommand("eval", "SI-SDR of an enhanced file");
  evl->add_option("--ref", va.ref, "Clean reference WAV")->required();
  evl->add_option("--est", va.est, "Enhanced WAV")->required();
  evl->add_option("--noisy", va.noisy, "Noisy input WAV, to report the improvement");
  evl->add_option("--delay-frames", va.delay_frames, "Output delay of the estimate in frames")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*enh) return cmd_enhance(ea);
    if (*prb) return cmd_probe(pa);
    if (*trn) return cmd_train(ta, *trn);
    if (*sch) return cmd_schedule(sa);
    if (*syn) return cmd_synth(ya);
    if (*evl) return cmd_eval(va);
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", to_string(e.kind()), e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
