#pragma once

#include <vector>

#include "dbuf/array4.hpp"
#include "dbuf/rng.hpp"
#include "dbuf/schedule.hpp"
#include "dbuf/sde_bbed.hpp"
#include "dbuf/spectral.hpp"
#include "dbuf/tape.hpp"

namespace dbuf {

enum class LossKind { Dsm, Dp, Mse };
const char* to_string(LossKind k) noexcept;
LossKind parse_loss_kind(const std::string& s);

// Complex arrays are stacked (N, 2, F, T) real/imag; losses average the
// squared modulus over the N * F * T complex coefficients.
struct TrainingBatch {
  Array4 input;  // (N, 4, F, K) = [V, Y] for diffusion, (N, 2, F, K) = [Y] for mse
  Array4 X0;     // (N, 2, F, K) clean chunk
  Array4 Y;      // (N, 2, F, K) noisy chunk
  Array4 Z;      // (N, 2, F, B) unit complex noise
  Array4 Sigma;  // (N, 1, F, B) sigma(t_j) per buffer column
  Array4 A;      // (N, 2, F, B) clean target = last B frames of X0
  std::vector<ScheduleVector> schedules;
  std::vector<std::vector<double>> frame_times;  // (N, K)
};

// One item: pads K - 1 leading zero frames onto the compressed pair, crops a
// random K-frame window ending on a real frame, draws a training schedule and
// perturbs the last B frames. `offset` forces the window start in padded
// coordinates (offset 0 -> K - 1 leading zeros).
TrainingBatch build_batch(const ComplexMatrix& clean, const ComplexMatrix& noisy, std::size_t K, std::size_t B,
                          const BbedParams& p, Rng& rng, long offset = -1);
// Concatenates items along the batch axis.
TrainingBatch concat_batches(const std::vector<TrainingBatch>& items);

// -Z / Sigma, shaped like Z. Throws DomainError when any sigma is zero.
Array4 dsm_target(const Array4& Z, const Array4& Sigma);
double dsm_loss(const Array4& out, const Array4& Z, const Array4& Sigma);
double dp_loss(const Array4& out, const Array4& A);
// d loss / d out for either loss: 2 (out - target) / count.
Array4 loss_gradient(const Array4& out, const Array4& target);

// Tape versions for training.
Var dsm_loss(Tape& tape, Var out, const Array4& Z, const Array4& Sigma);
Var dp_loss(Tape& tape, Var out, const Array4& A);

}  // namespace dbuf
