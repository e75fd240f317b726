#include "dbuf/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

#include "dbuf/error.hpp"

namespace dbuf {

void TrainConfig::validate() const {
  bbed.validate();
  stft.validate();
  if (batch == 0) throw ConfigError("train: batch must be positive");
  if (B == 0 || K < B) throw ConfigError("train: need K >= B >= 1");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: Adam betas in [0, 1)");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("train: ema_decay in [0, 1)");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"loss", to_string(loss)},   {"steps", steps},         {"batch", batch},
          {"K", K},                    {"B", B},                 {"lr", lr},
          {"cosine_lr", cosine_lr},
          {"beta1", beta1},            {"beta2", beta2},         {"adam_eps", adam_eps},
          {"ema_decay", ema_decay},    {"seed", seed},           {"zero_output_init", zero_output_init},
          {"bbed_c", bbed.c},
          {"bbed_r", bbed.r},          {"t_max", bbed.t_max},    {"epsilon", bbed.epsilon},
          {"n_fft", stft.n_fft},       {"hop", stft.hop},        {"sample_rate", stft.sample_rate},
          {"beta", stft.beta},         {"alpha", stft.alpha}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.loss = parse_loss_kind(j.at("loss").get<std::string>());
    j.at("steps").get_to(c.steps);
    j.at("batch").get_to(c.batch);
    j.at("K").get_to(c.K);
    j.at("B").get_to(c.B);
    j.at("lr").get_to(c.lr);
    c.cosine_lr = j.value("cosine_lr", false);
    j.at("beta1").get_to(c.beta1);
    j.at("beta2").get_to(c.beta2);
    j.at("adam_eps").get_to(c.adam_eps);
    j.at("ema_decay").get_to(c.ema_decay);
    j.at("seed").get_to(c.seed);
    j.at("zero_output_init").get_to(c.zero_output_init);
    j.at("bbed_c").get_to(c.bbed.c);
    j.at("bbed_r").get_to(c.bbed.r);
    j.at("t_max").get_to(c.bbed.t_max);
    j.at("epsilon").get_to(c.bbed.epsilon);
    j.at("n_fft").get_to(c.stft.n_fft);
    j.at("hop").get_to(c.stft.hop);
    j.at("sample_rate").get_to(c.stft.sample_rate);
    j.at("beta").get_to(c.stft.beta);
    j.at("alpha").get_to(c.stft.alpha);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<SpecPair> prepare_pairs(const std::vector<AudioPair>& pairs, const StftConfig& cfg) {
  std::vector<SpecPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.clean.size() != p.noisy.size()) throw DataError("prepare_pairs: clean/noisy length mismatch");
    if (p.clean.empty()) throw DataError("prepare_pairs: empty utterance");
    out.push_back({compress(analyze_stream(p.clean, cfg), cfg).data, compress(analyze_stream(p.noisy, cfg), cfg).data});
  }
  return out;
}

Trainer::Trainer(UNet& net, TrainConfig cfg) : net_(net), cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto& ucfg = net_.config();
  const bool diffusion = ucfg.mode == UNetMode::Diffusion;
  if ((cfg_.loss == LossKind::Mse) == diffusion) {
    throw ConfigError(std::string("train: loss ") + to_string(cfg_.loss) + " does not fit a " + to_string(ucfg.mode) +
                      " network");
  }
  if (diffusion && ucfg.buffer_len != cfg_.B) throw ConfigError("train: B differs from the network's buffer length");
  if (cfg_.loss == LossKind::Dsm && ucfg.output == OutputKind::Mask) {
    throw ConfigError("train: a masking output head cannot represent a score");
  }
  if (cfg_.zero_output_init) {
    net_.params().get("out.w").value.fill(0.0);
    net_.params().get("out.b").value.fill(0.0);
    net_.params().touch();
  }
  for (const auto& [name, p] : net_.params().items()) {
    m_.emplace(name, Array4(p.value.shape()));
    v_.emplace(name, Array4(p.value.shape()));
    ema_.emplace(name, p.value);
  }
}

TrainingBatch Trainer::batch_for_step(const std::vector<SpecPair>& data, std::size_t s) const {
  if (data.empty()) throw DataError("train: empty dataset");
  Rng rng(mix_seed(cfg_.seed, s, 0x7472));
  std::vector<TrainingBatch> items;
  items.reserve(cfg_.batch);
  for (std::size_t i = 0; i < cfg_.batch; ++i) {
    const auto& pair = data[rng.index(data.size())];
    items.push_back(build_batch(pair.clean, pair.noisy, cfg_.K, cfg_.B, cfg_.bbed, rng));
  }
  return concat_batches(items);
}

double Trainer::step(const std::vector<SpecPair>& data) {
  const TrainingBatch batch = batch_for_step(data, step_);
  auto& params = net_.params();
  params.zero_grad();

  Tape tape;
  double loss = 0.0;
  if (cfg_.loss == LossKind::Mse) {
    Var out = net_.forward(tape, tape.leaf(batch.Y), {}, true);
    Var l = ops::squared_error(tape, out, batch.X0,
                               1.0 / static_cast<double>(batch.X0.shape().batch * batch.X0.shape().freq * cfg_.K));
    loss = tape.value(l).values()[0];
    tape.backward(l);
  } else {
    Var out = net_.forward(tape, tape.leaf(batch.input), batch.frame_times, true);
    out = ops::slice(tape, out, Axis::Time, cfg_.K - cfg_.B, cfg_.B);
    Var l = cfg_.loss == LossKind::Dsm ? dsm_loss(tape, out, batch.Z, batch.Sigma) : dp_loss(tape, out, batch.A);
    loss = tape.value(l).values()[0];
    tape.backward(l);
  }
  if (!std::isfinite(loss)) {
    throw NumericError("train: loss became non-finite at step " + std::to_string(step_));
  }

  const double lr = lr_at(step_);
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  // EMA warm-up keeps early averages from being dominated by the initial weights.
  const double decay = std::min(cfg_.ema_decay, (1.0 + t) / (10.0 + t));
  for (auto& [name, p] : params.items()) {
    auto w = p.value.values();
    const auto g = p.grad.values();
    auto m = m_.at(name).values();
    auto v = v_.at(name).values();
    auto e = ema_.at(name).values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.adam_eps);
      e[i] = decay * e[i] + (1.0 - decay) * w[i];
    }
  }
  params.touch();
  return loss;
}

double Trainer::lr_at(std::size_t s) const {
  if (!cfg_.cosine_lr) return cfg_.lr;
  const double x = std::min(1.0, static_cast<double>(s) / static_cast<double>(std::max<std::size_t>(cfg_.steps, 1)));
  const double lo = 0.01 * cfg_.lr;
  return lo + 0.5 * (cfg_.lr - lo) * (1.0 + std::cos(std::numbers::pi * x));
}

void Trainer::copy_ema_to(UNet& net) const {
  for (auto& [name, p] : net.params().items()) {
    const auto it = ema_.find(name);
    if (it == ema_.end() || !(it->second.shape() == p.value.shape())) {
      throw ConfigError("copy_ema_to: parameter " + name + " does not match");
    }
    p.value = it->second;
  }
  net.params().touch();
}

Checkpoint Trainer::to_checkpoint() const {
  Checkpoint c;
  const auto& ucfg = net_.config();
  c.meta = {{"unet", ucfg.to_json()},
            {"unet_hash", std::to_string(ucfg.hash())},
            {"train", cfg_.to_json()},
            {"step", step_}};
  for (const auto& [name, p] : net_.params().items()) {
    c.arrays.emplace("param/" + name, p.value);
    c.arrays.emplace("adam_m/" + name, m_.at(name));
    c.arrays.emplace("adam_v/" + name, v_.at(name));
    c.arrays.emplace("ema/" + name, ema_.at(name));
  }
  return c;
}

namespace {

const Array4& array_for(const Checkpoint& c, const std::string& key, const Shape4& shape) {
  const auto it = c.arrays.find(key);
  if (it == c.arrays.end()) throw DataError("checkpoint: missing array " + key);
  if (!(it->second.shape() == shape)) {
    throw DataError("checkpoint: array " + key + " has shape " + it->second.shape().str() + ", expected " + shape.str());
  }
  return it->second;
}

void check_hash(const Checkpoint& c, const UNetConfig& cfg) {
  try {
    const auto stored = c.meta.at("unet_hash").get<std::string>();
    if (stored != std::to_string(UNetConfig::from_json(c.meta.at("unet")).hash())) {
      throw DataError("checkpoint: network config hash does not match its config block");
    }
    if (stored != std::to_string(cfg.hash())) throw ConfigError("checkpoint: network config differs from the model's");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad metadata: ") + e.what());
  }
}

}  // namespace

void Trainer::restore(const Checkpoint& ckpt) {
  check_hash(ckpt, net_.config());
  for (auto& [name, p] : net_.params().items()) {
    p.value = array_for(ckpt, "param/" + name, p.value.shape());
    m_.at(name) = array_for(ckpt, "adam_m/" + name, p.value.shape());
    v_.at(name) = array_for(ckpt, "adam_v/" + name, p.value.shape());
    ema_.at(name) = array_for(ckpt, "ema/" + name, p.value.shape());
  }
  try {
    step_ = ckpt.meta.at("step").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad step: ") + e.what());
  }
  net_.params().touch();
}

std::vector<TrainLogRow> train_toy(Trainer& trainer, const std::vector<SpecPair>& data, const std::string& loss_csv,
                                   const std::function<void(const TrainLogRow&)>& on_step) {
  if (data.empty()) throw DataError("train: empty dataset");
  std::ofstream csv;
  double smooth = std::numeric_limits<double>::quiet_NaN();
  if (!loss_csv.empty()) {
    const bool fresh = !std::filesystem::exists(loss_csv) || trainer.step_count() == 0;
    csv.open(loss_csv, fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw DataError("cannot open loss curve " + loss_csv);
    if (fresh) csv << "step,loss,ema_loss\n";
  }
  std::vector<TrainLogRow> rows;
  while (trainer.step_count() < trainer.config().steps) {
    const double loss = trainer.step(data);
    smooth = std::isnan(smooth) ? loss : 0.98 * smooth + 0.02 * loss;
    TrainLogRow row{trainer.step_count(), loss, smooth};
    rows.push_back(row);
    if (csv.is_open()) csv << row.step << ',' << row.loss << ',' << row.ema_loss << '\n';
    if (on_step) on_step(row);
  }
  return rows;
}

UNet load_model(const Checkpoint& ckpt, bool use_ema) {
  UNetConfig cfg;
  try {
    cfg = UNetConfig::from_json(ckpt.meta.at("unet"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  check_hash(ckpt, cfg);
  UNet net(cfg);
  const std::string prefix = use_ema ? "ema/" : "param/";
  for (auto& [name, p] : net.params().items()) p.value = array_for(ckpt, prefix + name, p.value.shape());
  net.params().touch();
  return net;
}

UNet load_model(const std::string& path, bool use_ema) { return load_model(load_checkpoint(path), use_ema); }

}  // namespace dbuf
