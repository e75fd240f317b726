#include "dbuf/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dbuf/error.hpp"

namespace dbuf {

void StftConfig::validate() const {
  if (hop == 0 || n_fft <= hop) {
    throw ConfigError("stft: require n_fft > hop > 0 (n_fft=" + std::to_string(n_fft) +
                      ", hop=" + std::to_string(hop) + ")");
  }
  if (!(sample_rate > 0.0)) throw ConfigError("stft: sample_rate must be positive");
  if (!(beta > 0.0) || !(alpha > 0.0)) throw ConfigError("stft: compression beta/alpha must be positive");
}

std::vector<double> StftConfig::window() const {
  std::vector<double> w(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_fft));
  }
  return w;
}

void ComplexMatrix::shift_in(std::span<const cplx> f) {
  if (f.size() != bins_) throw ShapeError("shift_in: frame has wrong bin count");
  if (frames_ == 0) return;
  std::move(data_.begin() + static_cast<std::ptrdiff_t>(bins_), data_.end(), data_.begin());
  std::copy(f.begin(), f.end(), data_.end() - static_cast<std::ptrdiff_t>(bins_));
}

void ComplexMatrix::append_frame(std::span<const cplx> f) {
  if (frames_ == 0 && bins_ == 0) bins_ = f.size();
  if (f.size() != bins_) throw ShapeError("append_frame: frame has wrong bin count");
  data_.insert(data_.end(), f.begin(), f.end());
  ++frames_;
}

ComplexMatrix ComplexMatrix::slice_frames(std::size_t first, std::size_t count) const {
  if (first + count > frames_) throw ShapeError("slice_frames: range out of bounds");
  ComplexMatrix out(bins_, count);
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(first * bins_), count * bins_, out.data_.begin());
  return out;
}

namespace {

// Owns a pair of FFTW r2c/c2r plans of a fixed size.
class RealDft {
 public:
  explicit RealDft(std::size_t n) : n_(n) {
    real_ = fftw_alloc_real(n);
    spec_ = fftw_alloc_complex(n / 2 + 1);
    forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real_, spec_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec_, real_, FFTW_ESTIMATE);
  }
  ~RealDft() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
    fftw_free(real_);
    fftw_free(spec_);
  }
  RealDft(const RealDft&) = delete;
  RealDft& operator=(const RealDft&) = delete;

  void forward(std::span<const double> in, std::span<cplx> out) {
    std::copy(in.begin(), in.end(), real_);
    fftw_execute(forward_);
    for (std::size_t f = 0; f < out.size(); ++f) out[f] = {spec_[f][0], spec_[f][1]};
  }
  // Unnormalized inverse; divide by n for the true inverse.
  void inverse(std::span<const cplx> in, std::span<double> out) {
    for (std::size_t f = 0; f < in.size(); ++f) {
      spec_[f][0] = in[f].real();
      spec_[f][1] = in[f].imag();
    }
    // A real signal has real DC and Nyquist bins.
    spec_[0][1] = 0.0;
    if (n_ % 2 == 0) spec_[n_ / 2][1] = 0.0;
    fftw_execute(inverse_);
    std::copy(real_, real_ + n_, out.begin());
  }

 private:
  std::size_t n_;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

void check_finite(std::span<const double> samples) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples[i])) {
      throw DataError("stft: non-finite input sample at index " + std::to_string(i));
    }
  }
}

}  // namespace

struct StreamingAnalyzer::Impl {
  StftConfig cfg;
  std::vector<double> win;
  std::vector<double> ring;  // most recent n_fft samples, oldest first
  std::vector<double> scratch;
  RealDft dft;

  explicit Impl(const StftConfig& c)
      : cfg(c), win(c.window()), ring(c.n_fft, 0.0), scratch(c.n_fft), dft(c.n_fft) {}
};

StreamingAnalyzer::StreamingAnalyzer(const StftConfig& cfg) {
  cfg.validate();
  impl_ = std::make_unique<Impl>(cfg);
}
StreamingAnalyzer::~StreamingAnalyzer() = default;
StreamingAnalyzer::StreamingAnalyzer(StreamingAnalyzer&&) noexcept = default;
StreamingAnalyzer& StreamingAnalyzer::operator=(StreamingAnalyzer&&) noexcept = default;

std::vector<cplx> StreamingAnalyzer::push_hop(std::span<const double> hop) {
  auto& s = *impl_;
  if (hop.size() != s.cfg.hop) throw ShapeError("push_hop: expected exactly one hop of samples");
  check_finite(hop);
  const auto h = static_cast<std::ptrdiff_t>(s.cfg.hop);
  std::move(s.ring.begin() + h, s.ring.end(), s.ring.begin());
  std::copy(hop.begin(), hop.end(), s.ring.end() - h);
  for (std::size_t i = 0; i < s.cfg.n_fft; ++i) s.scratch[i] = s.ring[i] * s.win[i];
  std::vector<cplx> frame(s.cfg.bins());
  s.dft.forward(s.scratch, frame);
  return frame;
}

void StreamingAnalyzer::reset() { std::fill(impl_->ring.begin(), impl_->ring.end(), 0.0); }

struct StreamingSynthesizer::Impl {
  StftConfig cfg;
  std::vector<double> win;
  std::vector<double> acc;   // aligned with the newest frame's first sample
  std::vector<double> norm;
  std::vector<double> grain;
  RealDft dft;

  explicit Impl(const StftConfig& c)
      : cfg(c), win(c.window()), acc(c.n_fft, 0.0), norm(c.n_fft, 0.0), grain(c.n_fft), dft(c.n_fft) {}
};

StreamingSynthesizer::StreamingSynthesizer(const StftConfig& cfg) {
  cfg.validate();
  impl_ = std::make_unique<Impl>(cfg);
}
StreamingSynthesizer::~StreamingSynthesizer() = default;
StreamingSynthesizer::StreamingSynthesizer(StreamingSynthesizer&&) noexcept = default;
StreamingSynthesizer& StreamingSynthesizer::operator=(StreamingSynthesizer&&) noexcept = default;

std::vector<double> StreamingSynthesizer::push_frame(std::span<const cplx> frame) {
  auto& s = *impl_;
  const std::size_t n = s.cfg.n_fft;
  const std::size_t hop = s.cfg.hop;
  if (frame.size() != s.cfg.bins()) throw ShapeError("push_frame: frame has wrong bin count");
  s.dft.inverse(frame, s.grain);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.acc[i] += s.grain[i] * scale * s.win[i];
    s.norm[i] += s.win[i] * s.win[i];
  }
  std::vector<double> out(hop);
  for (std::size_t i = 0; i < hop; ++i) out[i] = s.norm[i] > 1e-12 ? s.acc[i] / s.norm[i] : 0.0;
  const auto h = static_cast<std::ptrdiff_t>(hop);
  std::move(s.acc.begin() + h, s.acc.end(), s.acc.begin());
  std::move(s.norm.begin() + h, s.norm.end(), s.norm.begin());
  std::fill(s.acc.end() - h, s.acc.end(), 0.0);
  std::fill(s.norm.end() - h, s.norm.end(), 0.0);
  return out;
}

Spectrogram analyze_stream(std::span<const double> samples, const StftConfig& cfg) {
  cfg.validate();
  check_finite(samples);
  StreamingAnalyzer analyzer(cfg);
  const std::size_t frames = (samples.size() + cfg.hop - 1) / cfg.hop;
  Spectrogram spec{ComplexMatrix(cfg.bins(), frames), false};
  std::vector<double> hop(cfg.hop);
  for (std::size_t k = 0; k < frames; ++k) {
    const std::size_t start = k * cfg.hop;
    const std::size_t take = std::min(cfg.hop, samples.size() - start);
    std::copy_n(samples.begin() + static_cast<std::ptrdiff_t>(start), take, hop.begin());
    std::fill(hop.begin() + static_cast<std::ptrdiff_t>(take), hop.end(), 0.0);
    const auto frame = analyzer.push_hop(hop);
    std::copy(frame.begin(), frame.end(), spec.data.frame(k).begin());
  }
  return spec;
}

std::vector<double> synthesize_stream(const Spectrogram& spec, const StftConfig& cfg) {
  cfg.validate();
  if (spec.compressed) throw StateError("synthesize_stream: spectrogram is still compressed");
  if (spec.frames() > 0 && spec.bins() != cfg.bins()) throw ShapeError("synthesize_stream: bin count mismatch");
  const std::size_t n = cfg.n_fft;
  const std::size_t hop = cfg.hop;
  const std::size_t total = spec.frames() * hop;
  // Frame k covers samples [(k+1)*hop - n, (k+1)*hop); keep a left margin for
  // the part of the first frames that lies before sample 0.
  const std::size_t margin = n - hop;
  std::vector<double> acc(total + margin, 0.0);
  std::vector<double> norm(total + margin, 0.0);
  const auto win = cfg.window();
  std::vector<double> grain(n);
  RealDft dft(n);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < spec.frames(); ++k) {
    dft.inverse(spec.data.frame(k), grain);
    const std::size_t base = k * hop;  // index of the frame's first sample in acc
    for (std::size_t i = 0; i < n; ++i) {
      acc[base + i] += grain[i] * scale * win[i];
      norm[base + i] += win[i] * win[i];
    }
  }
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) {
    const double w = norm[i + margin];
    out[i] = w > 1e-12 ? acc[i + margin] / w : 0.0;
  }
  return out;
}

cplx compress_coefficient(cplx v, double beta, double alpha) noexcept {
  const double mag = std::abs(v);
  if (mag == 0.0) return {0.0, 0.0};
  return v * (beta * std::pow(mag, alpha) / mag);
}

cplx decompress_coefficient(cplx v, double beta, double alpha) noexcept {
  const double mag = std::abs(v);
  if (mag == 0.0) return {0.0, 0.0};
  return v * (std::pow(mag / beta, 1.0 / alpha) / mag);
}

Spectrogram compress(const Spectrogram& spec, const StftConfig& cfg) {
  if (spec.compressed) throw StateError("compress: spectrogram already compressed");
  Spectrogram out{spec.data, true};
  for (auto& v : out.data.values()) v = compress_coefficient(v, cfg.beta, cfg.alpha);
  return out;
}

Spectrogram decompress(const Spectrogram& spec, const StftConfig& cfg) {
  if (!spec.compressed) throw StateError("decompress: spectrogram is not compressed");
  Spectrogram out{spec.data, false};
  for (auto& v : out.data.values()) v = decompress_coefficient(v, cfg.beta, cfg.alpha);
  return out;
}

}  // namespace dbuf
