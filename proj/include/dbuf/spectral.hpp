#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace dbuf {

using cplx = std::complex<double>;

struct StftConfig {
  std::size_t n_fft = 510;
  std::size_t hop = 256;
  double sample_rate = 16000.0;
  double beta = 0.5;    // magnitude compression scale
  double alpha = 0.15;  // magnitude compression exponent

  // One-sided bin count.
  std::size_t bins() const noexcept { return n_fft / 2 + 1; }
  double hop_time() const noexcept { return static_cast<double>(hop) / sample_rate; }
  void validate() const;
  // Periodic Hann window of length n_fft.
  std::vector<double> window() const;
};

// F x K complex matrix stored frame-major: the F bins of frame k are contiguous.
class ComplexMatrix {
 public:
  ComplexMatrix() = default;
  ComplexMatrix(std::size_t bins, std::size_t frames) : bins_(bins), frames_(frames), data_(bins * frames) {}

  std::size_t bins() const noexcept { return bins_; }
  std::size_t frames() const noexcept { return frames_; }

  cplx& operator()(std::size_t f, std::size_t k) { return data_[k * bins_ + f]; }
  const cplx& operator()(std::size_t f, std::size_t k) const { return data_[k * bins_ + f]; }

  std::span<cplx> frame(std::size_t k) { return {data_.data() + k * bins_, bins_}; }
  std::span<const cplx> frame(std::size_t k) const { return {data_.data() + k * bins_, bins_}; }

  std::span<cplx> values() { return data_; }
  std::span<const cplx> values() const { return data_; }

  // Drops the first frame and appends `f` as the last one.
  void shift_in(std::span<const cplx> f);
  void append_frame(std::span<const cplx> f);
  // Frames [first, first + count).
  ComplexMatrix slice_frames(std::size_t first, std::size_t count) const;

  friend bool operator==(const ComplexMatrix&, const ComplexMatrix&) = default;

 private:
  std::size_t bins_ = 0;
  std::size_t frames_ = 0;
  std::vector<cplx> data_;
};

struct Spectrogram {
  ComplexMatrix data;
  bool compressed = false;

  std::size_t bins() const noexcept { return data.bins(); }
  std::size_t frames() const noexcept { return data.frames(); }
};

// Rolling-window analysis: each call consumes one hop of samples and emits the
// windowed one-sided DFT of the most recent n_fft samples. The window starts
// zero-filled.
class StreamingAnalyzer {
 public:
  explicit StreamingAnalyzer(const StftConfig& cfg);
  ~StreamingAnalyzer();
  StreamingAnalyzer(StreamingAnalyzer&&) noexcept;
  StreamingAnalyzer& operator=(StreamingAnalyzer&&) noexcept;

  std::vector<cplx> push_hop(std::span<const double> hop);
  void reset();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Weighted overlap-add with per-sample normalization by the summed squared
// window. Each pushed frame releases exactly one hop of finished samples;
// output lags the underlying signal by n_fft - hop samples.
class StreamingSynthesizer {
 public:
  explicit StreamingSynthesizer(const StftConfig& cfg);
  ~StreamingSynthesizer();
  StreamingSynthesizer(StreamingSynthesizer&&) noexcept;
  StreamingSynthesizer& operator=(StreamingSynthesizer&&) noexcept;

  std::vector<double> push_frame(std::span<const cplx> frame);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// ceil(len / hop) frames; the tail hop is zero-padded.
Spectrogram analyze_stream(std::span<const double> samples, const StftConfig& cfg);
// K * hop samples, aligned with the analysis input (sample 0 = input sample 0).
std::vector<double> synthesize_stream(const Spectrogram& spec, const StftConfig& cfg);

cplx compress_coefficient(cplx v, double beta, double alpha) noexcept;
cplx decompress_coefficient(cplx v, double beta, double alpha) noexcept;
Spectrogram compress(const Spectrogram& spec, const StftConfig& cfg);
Spectrogram decompress(const Spectrogram& spec, const StftConfig& cfg);

}  // namespace dbuf
