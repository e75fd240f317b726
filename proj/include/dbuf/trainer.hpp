#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbuf/checkpoint.hpp"
#include "dbuf/dataset.hpp"
#include "dbuf/losses.hpp"
#include "dbuf/sde_bbed.hpp"
#include "dbuf/spectral.hpp"
#include "dbuf/unet.hpp"

namespace dbuf {

struct TrainConfig {
  LossKind loss = LossKind::Dp;
  std::size_t steps = 2000;
  std::size_t batch = 4;
  std::size_t K = 64;
  std::size_t B = 16;
  double lr = 1e-4;
  // Cosine anneal from lr down to lr/100 at `steps`.
  bool cosine_lr = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double ema_decay = 0.999;
  std::uint64_t seed = 0;
  // Start from a zeroed output conv so the untrained net predicts 0 instead
  // of O(1) noise, which decompression would blow up.
  bool zero_output_init = true;
  BbedParams bbed;
  StftConfig stft;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Compressed STFTs of a clean/noisy pair.
struct SpecPair {
  ComplexMatrix clean;
  ComplexMatrix noisy;
};
std::vector<SpecPair> prepare_pairs(const std::vector<AudioPair>& pairs, const StftConfig& cfg);

class Trainer {
 public:
  Trainer(UNet& net, TrainConfig cfg);

  // One Adam step on a batch drawn with the step's own seed; returns the loss.
  double step(const std::vector<SpecPair>& data);
  std::size_t step_count() const noexcept { return step_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  const std::map<std::string, Array4>& ema() const noexcept { return ema_; }
  void copy_ema_to(UNet& net) const;

  // The batch step `s` trains on.
  TrainingBatch batch_for_step(const std::vector<SpecPair>& data, std::size_t s) const;
  // Learning rate used by step `s` (0-based).
  double lr_at(std::size_t s) const;

  Checkpoint to_checkpoint() const;
  // Restores weights, optimizer moments, EMA and step count; the network
  // config must match the checkpoint's.
  void restore(const Checkpoint& ckpt);

 private:
  UNet& net_;
  TrainConfig cfg_;
  std::size_t step_ = 0;
  std::map<std::string, Array4> m_, v_, ema_;
};

struct TrainLogRow {
  std::size_t step = 0;
  double loss = 0.0;
  double ema_loss = 0.0;
};

// Runs cfg.steps - trainer.step_count() steps, appending rows to the CSV
// (header written when the file is new). `on_step` may be empty.
std::vector<TrainLogRow> train_toy(Trainer& trainer, const std::vector<SpecPair>& data, const std::string& loss_csv,
                                   const std::function<void(const TrainLogRow&)>& on_step = {});

// Builds the network described by a checkpoint and loads its EMA (or raw)
// weights.
UNet load_model(const std::string& path, bool use_ema = true);
UNet load_model(const Checkpoint& ckpt, bool use_ema = true);

}  // namespace dbuf
