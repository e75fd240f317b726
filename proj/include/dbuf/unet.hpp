#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbuf/array4.hpp"
#include "dbuf/schedule.hpp"
#include "dbuf/spectral.hpp"
#include "dbuf/tape.hpp"

namespace dbuf {

enum class UNetMode { Predictive, Diffusion };
enum class NormKind { Cumulative, None };
enum class PaddingKind { BlockCausal, Symmetric };
// Direct: the last conv is the estimate. Mask: the last conv is a gain logit;
// the estimate is sigmoid(logit) * Y, so it never exceeds the noisy magnitude
// (data prediction only).
enum class OutputKind { Direct, Mask };

struct UNetConfig {
  // channels[0] is the width after the input conv; stage l maps
  // channels[l-1] -> channels[l].
  std::vector<std::size_t> channels{8, 16, 16, 16, 8};
  std::vector<std::size_t> time_strides{2, 2, 2, 2};
  std::vector<std::size_t> freq_strides{2, 2, 2, 2};
  std::vector<std::size_t> time_kernels{3, 3, 3, 3};
  std::vector<std::size_t> freq_kernels{3, 3, 3, 3};
  std::size_t fourier_dim = 64;
  UNetMode mode = UNetMode::Diffusion;
  std::size_t buffer_len = 16;
  NormKind norm = NormKind::Cumulative;
  PaddingKind padding = PaddingKind::BlockCausal;
  OutputKind output = OutputKind::Direct;
  std::size_t max_groups = 8;
  double norm_eps = 1e-6;
  std::uint64_t init_seed = 1;

  std::size_t stages() const noexcept { return time_strides.size(); }
  std::size_t global_stride() const noexcept;
  std::size_t in_channels() const noexcept { return mode == UNetMode::Diffusion ? 4 : 2; }
  void validate() const;

  nlohmann::json to_json() const;
  static UNetConfig from_json(const nlohmann::json& j);
  // FNV-1a of the canonical JSON dump.
  std::uint64_t hash() const;
};

const char* to_string(UNetMode m) noexcept;
const char* to_string(NormKind n) noexcept;
const char* to_string(PaddingKind p) noexcept;
const char* to_string(OutputKind o) noexcept;
UNetMode parse_unet_mode(const std::string& s);
NormKind parse_norm_kind(const std::string& s);
PaddingKind parse_padding_kind(const std::string& s);
OutputKind parse_output_kind(const std::string& s);

// Zeros padded on the left of a length-n sequence before a stride-s conv with
// kernel k so that the last kernel window ends on the last sample.
std::size_t left_pad_amount(std::size_t n, std::size_t k, std::size_t s);

// Time-axis helpers on a (N, C, F, T) array; the kernel is (C_out, C_in, kf, kt)
// with kf = 1 and no freq padding. The UNet applies the same conventions
// inside its stages with freq padding added.
Array4 bc_downsample(const Array4& x, const Array4& kernel, std::size_t s);
// Transposed conv, drop the trailing (k - s) partial tokens, crop on the left
// to target_len.
Array4 bc_upsample(const Array4& x, const Array4& kernel, std::size_t s, std::size_t target_len);

// Stacks real/imag parts of each matrix into channels of a (1, 2*n, F, K) array.
Array4 stack_complex(std::initializer_list<const ComplexMatrix*> mats);
// Channels (0, 1) of batch item n as a complex F x T matrix.
ComplexMatrix unstack_complex(const Array4& a, std::size_t n = 0);

class UNet {
 public:
  explicit UNet(UNetConfig cfg);

  const UNetConfig& config() const noexcept { return cfg_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }
  // Redraws every weight from seed (biases zero, norm scales one).
  void initialize(std::uint64_t seed);

  // input (N, in_channels, F, T) -> (N, 2, F, T). frame_times[n][t] is the
  // diffusion time of frame t for item n (ignored in predictive mode). With
  // train = false the parameters enter the tape as constants.
  Var forward(Tape& tape, Var input, const std::vector<std::vector<double>>& frame_times, bool train) const;
  Array4 infer(const Array4& input, const std::vector<std::vector<double>>& frame_times) const;

  // Diffusion mode: V, Y are F x K (compressed); returns the estimate for the
  // last B frames.
  ComplexMatrix forward_diffusion(const ComplexMatrix& V, const ComplexMatrix& Y, const ScheduleVector& t) const;
  // Predictive mode: F x K in, F x K out.
  ComplexMatrix forward_predictive(const ComplexMatrix& Y) const;

  // Frame times for a K-frame chunk whose last B frames carry the schedule.
  static std::vector<double> buffer_frame_times(std::size_t K, const ScheduleVector& t);

 private:
  Var stage_embedding(Tape& tape, const Array4& features, std::size_t level_len, std::size_t block, const std::string& name,
                      bool train) const;
  // GN (unless disabled) -> + temb (when valid) -> SiLU.
  Var norm_act(Tape& tape, Var x, const std::string& name, bool train, Var temb = Var()) const;
  Var weight(Tape& tape, const std::string& name, bool train) const;
  Array4 fourier_features(const std::vector<std::vector<double>>& frame_times, std::size_t T) const;

  UNetConfig cfg_;
  // Tape::param needs a mutable handle; forward() itself never writes weights.
  mutable ParamStore params_;
};

}  // namespace dbuf
