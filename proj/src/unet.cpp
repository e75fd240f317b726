#include "dbuf/unet.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "dbuf/error.hpp"
#include "dbuf/rng.hpp"

namespace dbuf {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

std::size_t group_count(std::size_t channels, std::size_t max_groups) {
  return std::gcd(std::min(max_groups, channels), channels);
}

std::string stage_name(const char* kind, std::size_t l) { return std::string(kind) + std::to_string(l); }

// Time padding (lo, hi) of a stride-s conv with kernel k over n tokens.
std::pair<std::size_t, std::size_t> time_pad(PaddingKind kind, std::size_t n, std::size_t k, std::size_t s) {
  if (kind == PaddingKind::BlockCausal) return {left_pad_amount(n, k, s), 0};
  const std::size_t lo = (k - 1) / 2;
  const std::size_t need = (ceil_div(n, s) - 1) * s + k;  // padded length for ceil(n/s) outputs
  return {lo, need > n + lo ? need - n - lo : 0};
}

Array4 crop(const Array4& x, Axis axis, std::size_t start, std::size_t len) {
  Tape t;
  Var v = t.leaf(x);
  return t.value(ops::slice(t, v, axis, start, len));
}

}  // namespace

std::size_t left_pad_amount(std::size_t n, std::size_t k, std::size_t s) {
  if (s == 0 || k < s) throw ConfigError("left_pad_amount: kernel must cover the stride (k=" + std::to_string(k) +
                                         ", s=" + std::to_string(s) + ")");
  if (n == 0) throw DomainError("left_pad_amount: empty sequence");
  return ceil_div(n, s) * s - n + (k - s);
}

Array4 bc_downsample(const Array4& x, const Array4& kernel, std::size_t s) {
  const std::size_t k = kernel.shape().time;
  Pad2 pad;
  pad.time_lo = left_pad_amount(x.shape().time, k, s);
  return conv2d(x, kernel, {}, {1, s}, pad);
}

Array4 bc_upsample(const Array4& x, const Array4& kernel, std::size_t s, std::size_t target_len) {
  const std::size_t k = kernel.shape().time;
  if (k < s) throw ConfigError("bc_upsample: kernel must cover the stride");
  Array4 full = conv_transpose2d(x, kernel, {}, {1, s});
  const std::size_t kept = x.shape().time * s;  // trailing k - s partial tokens dropped
  if (kept < target_len) {
    throw StateError("bc_upsample: produced " + std::to_string(kept) + " frames, need " + std::to_string(target_len));
  }
  return crop(full, Axis::Time, kept - target_len, target_len);
}

std::size_t UNetConfig::global_stride() const noexcept {
  std::size_t g = 1;
  for (auto s : time_strides) g *= s;
  return g;
}

void UNetConfig::validate() const {
  const std::size_t L = stages();
  if (L == 0) throw ConfigError("unet: need at least one stage");
  if (channels.size() != L + 1) throw ConfigError("unet: channels must have stages + 1 entries");
  if (freq_strides.size() != L || time_kernels.size() != L || freq_kernels.size() != L) {
    throw ConfigError("unet: per-stage vectors must all have " + std::to_string(L) + " entries");
  }
  for (std::size_t l = 0; l < L; ++l) {
    if (time_strides[l] == 0 || freq_strides[l] == 0) throw ConfigError("unet: strides must be positive");
    if (time_kernels[l] < time_strides[l]) throw ConfigError("unet: time kernel smaller than its stride");
    if (freq_kernels[l] < freq_strides[l]) throw ConfigError("unet: freq kernel smaller than its stride");
    if (freq_kernels[l] % 2 == 0 || time_kernels[l] % 2 == 0) throw ConfigError("unet: kernels must be odd");
  }
  for (auto c : channels) {
    if (c == 0) throw ConfigError("unet: zero channel width");
  }
  if (mode == UNetMode::Diffusion) {
    if (fourier_dim < 2 || fourier_dim % 2) throw ConfigError("unet: fourier_dim must be even and >= 2");
    if (buffer_len != global_stride()) {
      throw ConfigError("unet: diffusion mode needs global stride " + std::to_string(global_stride()) +
                        " equal to buffer length " + std::to_string(buffer_len));
    }
  }
  if (max_groups == 0) throw ConfigError("unet: max_groups must be positive");
  if (!(norm_eps > 0.0)) throw ConfigError("unet: norm_eps must be positive");
}

nlohmann::json UNetConfig::to_json() const {
  return {{"channels", channels},
          {"time_strides", time_strides},
          {"freq_strides", freq_strides},
          {"time_kernels", time_kernels},
          {"freq_kernels", freq_kernels},
          {"fourier_dim", fourier_dim},
          {"mode", to_string(mode)},
          {"buffer_len", buffer_len},
          {"norm", to_string(norm)},
          {"padding", to_string(padding)},
          {"output", to_string(output)},
          {"max_groups", max_groups},
          {"norm_eps", norm_eps},
          {"init_seed", init_seed}};
}

UNetConfig UNetConfig::from_json(const nlohmann::json& j) {
  UNetConfig c;
  try {
    j.at("channels").get_to(c.channels);
    j.at("time_strides").get_to(c.time_strides);
    j.at("freq_strides").get_to(c.freq_strides);
    j.at("time_kernels").get_to(c.time_kernels);
    j.at("freq_kernels").get_to(c.freq_kernels);
    j.at("fourier_dim").get_to(c.fourier_dim);
    c.mode = parse_unet_mode(j.at("mode").get<std::string>());
    j.at("buffer_len").get_to(c.buffer_len);
    c.norm = parse_norm_kind(j.at("norm").get<std::string>());
    c.padding = parse_padding_kind(j.at("padding").get<std::string>());
    c.output = parse_output_kind(j.at("output").get<std::string>());
    j.at("max_groups").get_to(c.max_groups);
    j.at("norm_eps").get_to(c.norm_eps);
    j.at("init_seed").get_to(c.init_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("unet config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t UNetConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : to_json().dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

const char* to_string(UNetMode m) noexcept { return m == UNetMode::Diffusion ? "diffusion" : "predictive"; }
const char* to_string(NormKind n) noexcept { return n == NormKind::Cumulative ? "cumulative" : "none"; }
const char* to_string(PaddingKind p) noexcept { return p == PaddingKind::BlockCausal ? "block_causal" : "symmetric"; }
const char* to_string(OutputKind o) noexcept { return o == OutputKind::Direct ? "direct" : "mask"; }

UNetMode parse_unet_mode(const std::string& s) {
  if (s == "diffusion") return UNetMode::Diffusion;
  if (s == "predictive") return UNetMode::Predictive;
  throw ConfigError("unknown unet mode '" + s + "'");
}

NormKind parse_norm_kind(const std::string& s) {
  if (s == "cumulative") return NormKind::Cumulative;
  if (s == "none") return NormKind::None;
  throw ConfigError("unknown norm kind '" + s + "'");
}

PaddingKind parse_padding_kind(const std::string& s) {
  if (s == "block_causal") return PaddingKind::BlockCausal;
  if (s == "symmetric") return PaddingKind::Symmetric;
  throw ConfigError("unknown padding kind '" + s + "'");
}

OutputKind parse_output_kind(const std::string& s) {
  if (s == "direct") return OutputKind::Direct;
  if (s == "mask") return OutputKind::Mask;
  throw ConfigError("unknown output kind '" + s + "'");
}

Array4 stack_complex(std::initializer_list<const ComplexMatrix*> mats) {
  if (mats.size() == 0) throw ShapeError("stack_complex: nothing to stack");
  const std::size_t F = (*mats.begin())->bins();
  const std::size_t K = (*mats.begin())->frames();
  Array4 out({1, 2 * mats.size(), F, K});
  std::size_t c = 0;
  for (const ComplexMatrix* m : mats) {
    if (m->bins() != F || m->frames() != K) throw ShapeError("stack_complex: matrices differ in shape");
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t k = 0; k < K; ++k) {
        out(0, c, f, k) = (*m)(f, k).real();
        out(0, c + 1, f, k) = (*m)(f, k).imag();
      }
    }
    c += 2;
  }
  return out;
}

ComplexMatrix unstack_complex(const Array4& a, std::size_t n) {
  const auto& s = a.shape();
  if (s.channels < 2 || n >= s.batch) throw ShapeError("unstack_complex: need two channels, got " + s.str());
  ComplexMatrix m(s.freq, s.time);
  for (std::size_t f = 0; f < s.freq; ++f) {
    for (std::size_t k = 0; k < s.time; ++k) m(f, k) = {a(n, 0, f, k), a(n, 1, f, k)};
  }
  return m;
}

UNet::UNet(UNetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t L = cfg_.stages();
  const auto& ch = cfg_.channels;
  const bool temb = cfg_.mode == UNetMode::Diffusion;
  const std::size_t M = cfg_.fourier_dim;
  auto conv = [&](const std::string& name, std::size_t out, std::size_t in, std::size_t kf, std::size_t kt) {
    params_.add(name + ".w", {out, in, kf, kt});
    params_.add(name + ".b", {1, out, 1, 1});
  };
  auto norm = [&](const std::string& name, std::size_t c) {
    if (cfg_.norm == NormKind::None) return;
    params_.add(name + ".g", {1, c, 1, 1});
    params_.add(name + ".beta", {1, c, 1, 1});
  };

  conv("in", ch[0], cfg_.in_channels(), 3, 3);
  for (std::size_t l = 1; l <= L; ++l) {
    const std::string d = stage_name("down", l);
    const std::size_t kf = cfg_.freq_kernels[l - 1];
    const std::size_t kt = cfg_.time_kernels[l - 1];
    norm(d + ".norm0", ch[l - 1]);
    if (temb) conv(d + ".temb", ch[l - 1], M, 1, 1);
    conv(d + ".conv0", ch[l], ch[l - 1], kf, kt);
    norm(d + ".norm1", ch[l]);
    conv(d + ".conv1", ch[l], ch[l], kf, kt);

    const std::string u = stage_name("up", l);
    norm(u + ".norm0", ch[l]);
    if (temb) conv(u + ".temb", ch[l], M, 1, 1);
    // Transposed kernel layout is (C_in, C_out, kf, kt).
    params_.add(u + ".tconv.w", {ch[l], ch[l - 1], kf, kt});
    params_.add(u + ".tconv.b", {1, ch[l - 1], 1, 1});
    norm(u + ".norm1", 2 * ch[l - 1]);
    conv(u + ".conv1", ch[l - 1], 2 * ch[l - 1], kf, kt);
  }
  norm("out.norm", ch[0]);
  conv("out", cfg_.output == OutputKind::Mask ? 1 : 2, ch[0], 3, 3);
  initialize(cfg_.init_seed);
}

void UNet::initialize(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x756e6574));
  for (auto& [name, p] : params_.items()) {
    const auto& s = p.value.shape();
    const bool is_weight = name.size() > 2 && name.compare(name.size() - 2, 2, ".w") == 0;
    if (is_weight) {
      // Transposed kernels are stored (C_in, C_out, ...), so fan-in sits in batch.
      const bool transposed = name.find(".tconv.") != std::string::npos;
      const double fan_in = static_cast<double>((transposed ? s.batch : s.channels) * s.freq * s.time);
      const double std = 1.0 / std::sqrt(fan_in);
      for (auto& v : p.value.values()) v = std * rng.normal();
    } else if (name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0) {
      p.value.fill(1.0);
    } else {
      p.value.fill(0.0);
    }
    p.grad.fill(0.0);
  }
  params_.touch();
}

Var UNet::weight(Tape& tape, const std::string& name, bool train) const {
  Parameter& p = params_.get(name);
  return train ? tape.param(p) : tape.leaf(p.value);
}

Var UNet::norm_act(Tape& tape, Var x, const std::string& name, bool train, Var temb) const {
  if (cfg_.norm == NormKind::Cumulative) {
    const std::size_t C = tape.value(x).shape().channels;
    x = ops::cumulative_group_norm(tape, x, weight(tape, name + ".g", train), weight(tape, name + ".beta", train),
                                   group_count(C, cfg_.max_groups), cfg_.norm_eps);
  }
  if (temb.valid()) x = ops::add_broadcast_freq(tape, x, temb);
  return ops::silu(tape, x);
}

Array4 UNet::fourier_features(const std::vector<std::vector<double>>& frame_times, std::size_t T) const {
  const std::size_t M = cfg_.fourier_dim;
  const std::size_t half = M / 2;
  Array4 out({frame_times.size(), M, 1, T});
  std::vector<double> freqs(half);
  // Log-spaced from 0.5 to 32 cycles per unit diffusion time.
  for (std::size_t m = 0; m < half; ++m) {
    const double u = half > 1 ? static_cast<double>(m) / static_cast<double>(half - 1) : 0.0;
    freqs[m] = 0.5 * std::pow(64.0, u);
  }
  for (std::size_t n = 0; n < frame_times.size(); ++n) {
    if (frame_times[n].size() != T) throw ShapeError("unet: frame_times length does not match input frames");
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t m = 0; m < half; ++m) {
        const double phase = 2.0 * std::numbers::pi * freqs[m] * frame_times[n][t];
        out(n, m, 0, t) = std::sin(phase);
        out(n, half + m, 0, t) = std::cos(phase);
      }
    }
  }
  return out;
}

Var UNet::stage_embedding(Tape& tape, const Array4& features, std::size_t level_len, std::size_t block,
                          const std::string& name, bool train) const {
  // Token q at this level summarizes a block of `block` frames ending at
  // frame e; it takes that frame's features.
  const auto& fs = features.shape();
  const std::size_t T0 = fs.time;
  Array4 sub({fs.batch, fs.channels, 1, level_len});
  for (std::size_t q = 0; q < level_len; ++q) {
    const std::size_t back = block * (level_len - 1 - q);
    const std::size_t e = back < T0 ? T0 - 1 - back : 0;
    for (std::size_t n = 0; n < fs.batch; ++n) {
      for (std::size_t m = 0; m < fs.channels; ++m) sub(n, m, 0, q) = features(n, m, 0, e);
    }
  }
  Var f = tape.leaf(std::move(sub));
  return ops::conv2d(tape, f, weight(tape, name + ".w", train), weight(tape, name + ".b", train), {}, {});
}

Var UNet::forward(Tape& tape, Var input, const std::vector<std::vector<double>>& frame_times, bool train) const {
  const Shape4 xs = tape.value(input).shape();
  if (xs.channels != cfg_.in_channels()) {
    throw ShapeError("unet: expected " + std::to_string(cfg_.in_channels()) + " input channels, got " + xs.str());
  }
  if (xs.time == 0) return tape.leaf(Array4({xs.batch, 2, xs.freq, 0}));
  const std::size_t L = cfg_.stages();
  const bool temb = cfg_.mode == UNetMode::Diffusion;
  Array4 features;
  if (temb) {
    if (frame_times.size() != xs.batch) throw ShapeError("unet: need frame times for every batch item");
    features = fourier_features(frame_times, xs.time);
  }
  auto conv = [&](Var x, const std::string& name, Stride2 stride, std::size_t kf, std::size_t kt) {
    const Shape4 s = tape.value(x).shape();
    Pad2 pad;
    pad.freq_lo = pad.freq_hi = (kf - 1) / 2;
    std::tie(pad.time_lo, pad.time_hi) = time_pad(cfg_.padding, s.time, kt, stride.time);
    return ops::conv2d(tape, x, weight(tape, name + ".w", train), weight(tape, name + ".b", train), stride, pad);
  };

  std::vector<Var> skips;
  std::vector<std::size_t> blocks{1};
  Var h = conv(input, "in", {1, 1}, 3, 3);
  for (std::size_t l = 1; l <= L; ++l) {
    skips.push_back(h);
    const std::string d = stage_name("down", l);
    const std::size_t kf = cfg_.freq_kernels[l - 1];
    const std::size_t kt = cfg_.time_kernels[l - 1];
    Var e;
    if (temb) e = stage_embedding(tape, features, tape.value(h).shape().time, blocks.back(), d + ".temb", train);
    h = norm_act(tape, h, d + ".norm0", train, e);
    h = conv(h, d + ".conv0", {cfg_.freq_strides[l - 1], cfg_.time_strides[l - 1]}, kf, kt);
    blocks.push_back(blocks.back() * cfg_.time_strides[l - 1]);
    h = norm_act(tape, h, d + ".norm1", train);
    h = conv(h, d + ".conv1", {1, 1}, kf, kt);
  }
  for (std::size_t l = L; l >= 1; --l) {
    const std::string u = stage_name("up", l);
    const std::size_t kf = cfg_.freq_kernels[l - 1];
    const std::size_t kt = cfg_.time_kernels[l - 1];
    const std::size_t sf = cfg_.freq_strides[l - 1];
    const std::size_t st = cfg_.time_strides[l - 1];
    const Shape4 target = tape.value(skips[l - 1]).shape();
    Var e;
    if (temb) e = stage_embedding(tape, features, tape.value(h).shape().time, blocks[l], u + ".temb", train);
    h = norm_act(tape, h, u + ".norm0", train, e);
    const std::size_t m = tape.value(h).shape().time;
    h = ops::conv_transpose2d(tape, h, weight(tape, u + ".tconv.w", train), weight(tape, u + ".tconv.b", train),
                              {sf, st});
    const Shape4 full = tape.value(h).shape();
    const std::size_t f_off = (kf - 1) / 2;
    std::size_t t_off = 0;
    if (cfg_.padding == PaddingKind::BlockCausal) {
      // Keep the m*s frames whose tokens are complete, then the last n.
      if (m * st < target.time) throw StateError("unet: upsampled length too short at stage " + std::to_string(l));
      t_off = m * st - target.time;
    } else {
      t_off = (kt - 1) / 2;
    }
    if (full.freq < f_off + target.freq || full.time < t_off + target.time) {
      throw StateError("unet: upsampled shape " + full.str() + " cannot cover " + target.str());
    }
    h = ops::slice(tape, h, Axis::Freq, f_off, target.freq);
    h = ops::slice(tape, h, Axis::Time, t_off, target.time);
    h = ops::concat_channels(tape, h, skips[l - 1]);
    h = norm_act(tape, h, u + ".norm1", train);
    h = conv(h, u + ".conv1", {1, 1}, kf, kt);
  }
  h = norm_act(tape, h, "out.norm", train);
  h = conv(h, "out", {1, 1}, 3, 3);
  if (cfg_.output == OutputKind::Mask) h = ops::sigmoid_gain(tape, h, input, cfg_.in_channels() - 2);  // Y is last
  return h;
}

Array4 UNet::infer(const Array4& input, const std::vector<std::vector<double>>& frame_times) const {
  Tape tape;
  Var x = tape.leaf(input);
  return tape.value(forward(tape, x, frame_times, false));
}

std::vector<double> UNet::buffer_frame_times(std::size_t K, const ScheduleVector& t) {
  const std::size_t B = t.size();
  if (K < B) throw DomainError("unet: chunk of " + std::to_string(K) + " frames cannot hold a buffer of " +
                               std::to_string(B));
  std::vector<double> times(K, 0.0);
  for (std::size_t i = 1; i <= B; ++i) times[K - B + i - 1] = t.at(i);
  return times;
}

ComplexMatrix UNet::forward_diffusion(const ComplexMatrix& V, const ComplexMatrix& Y, const ScheduleVector& t) const {
  if (cfg_.mode != UNetMode::Diffusion) throw StateError("unet: forward_diffusion on a predictive model");
  if (V.bins() != Y.bins() || V.frames() != Y.frames()) throw ShapeError("unet: V and Y differ in shape");
  const std::size_t B = cfg_.buffer_len;
  if (t.size() != B) {
    throw DomainError("unet: schedule has " + std::to_string(t.size()) + " steps, buffer holds " + std::to_string(B));
  }
  const std::size_t K = V.frames();
  if (K < B) throw DomainError("unet: chunk shorter than the buffer");
  Array4 out = infer(stack_complex({&V, &Y}), {buffer_frame_times(K, t)});
  return unstack_complex(out).slice_frames(K - B, B);
}

ComplexMatrix UNet::forward_predictive(const ComplexMatrix& Y) const {
  if (cfg_.mode != UNetMode::Predictive) throw StateError("unet: forward_predictive on a diffusion model");
  if (Y.frames() == 0) return ComplexMatrix(Y.bins(), 0);
  return unstack_complex(infer(stack_complex({&Y}), {}));
}

}  // namespace dbuf
