#include "dbuf/losses.hpp"

#include "dbuf/error.hpp"
#include "dbuf/unet.hpp"

namespace dbuf {

const char* to_string(LossKind k) noexcept {
  switch (k) {
    case LossKind::Dsm: return "dsm";
    case LossKind::Dp: return "dp";
    case LossKind::Mse: return "mse";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "dsm") return LossKind::Dsm;
  if (s == "dp") return LossKind::Dp;
  if (s == "mse") return LossKind::Mse;
  throw ConfigError("unknown loss '" + s + "' (dsm | dp | mse)");
}

namespace {

// Number of complex coefficients in a stacked (N, 2, F, T) array.
double complex_count(const Array4& a) {
  const auto& s = a.shape();
  if (s.channels != 2) throw ShapeError("loss: expected stacked real/imag channels, got " + s.str());
  return static_cast<double>(s.batch * s.freq * s.time);
}

double mean_sq_error(const Array4& out, const Array4& target) {
  if (!(out.shape() == target.shape())) {
    throw ShapeError("loss: shape mismatch " + out.shape().str() + " vs " + target.shape().str());
  }
  const double count = complex_count(out);
  const auto o = out.values();
  const auto t = target.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double e = o[i] - t[i];
    acc += e * e;
  }
  return acc / count;
}

void put(Array4& a, std::size_t n, std::size_t f, std::size_t k, cplx v) {
  a(n, 0, f, k) = v.real();
  a(n, 1, f, k) = v.imag();
}

}  // namespace

TrainingBatch build_batch(const ComplexMatrix& clean, const ComplexMatrix& noisy, std::size_t K, std::size_t B,
                          const BbedParams& p, Rng& rng, long offset) {
  if (clean.frames() != noisy.frames() || clean.bins() != noisy.bins()) {
    throw DataError("build_batch: clean and noisy spectrograms differ in shape");
  }
  if (clean.frames() == 0) throw DataError("build_batch: utterance shorter than one frame");
  if (B == 0 || K < B) throw ConfigError("build_batch: need K >= B >= 1");
  const std::size_t N = clean.frames();
  const std::size_t F = clean.bins();
  // Padded frame q maps to utterance frame q - (K - 1).
  std::size_t start = 0;
  if (offset >= 0) {
    if (static_cast<std::size_t>(offset) >= N) throw DomainError("build_batch: offset past the last window");
    start = static_cast<std::size_t>(offset);
  } else {
    start = rng.index(N);
  }
  const auto schedule = B >= 2 ? training_schedule(B, p, rng) : ScheduleVector({p.t_max});

  TrainingBatch b;
  b.X0 = Array4({1, 2, F, K});
  b.Y = Array4({1, 2, F, K});
  b.Z = Array4({1, 2, F, B});
  b.Sigma = Array4({1, 1, F, B});
  b.A = Array4({1, 2, F, B});
  Array4 V({1, 2, F, K});
  for (std::size_t k = 0; k < K; ++k) {
    const long src = static_cast<long>(start + k) - static_cast<long>(K - 1);
    for (std::size_t f = 0; f < F; ++f) {
      const cplx x0 = src >= 0 ? clean(f, static_cast<std::size_t>(src)) : cplx{};
      const cplx y = src >= 0 ? noisy(f, static_cast<std::size_t>(src)) : cplx{};
      put(b.X0, 0, f, k, x0);
      put(b.Y, 0, f, k, y);
      put(V, 0, f, k, x0);
    }
  }
  for (std::size_t j = 0; j < B; ++j) {
    const std::size_t k = K - B + j;
    const double t = schedule.at(j + 1);
    const double s = stddev(t, p);
    for (std::size_t f = 0; f < F; ++f) {
      const cplx x0{b.X0(0, 0, f, k), b.X0(0, 1, f, k)};
      const cplx y{b.Y(0, 0, f, k), b.Y(0, 1, f, k)};
      const cplx z = rng.complex_normal();
      put(b.Z, 0, f, j, z);
      b.Sigma(0, 0, f, j) = s;
      put(b.A, 0, f, j, x0);
      put(V, 0, f, k, mean_evolution(x0, y, t) + s * z);
    }
  }
  b.input = Array4({1, 4, F, K});
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t k = 0; k < K; ++k) {
      b.input(0, 0, f, k) = V(0, 0, f, k);
      b.input(0, 1, f, k) = V(0, 1, f, k);
      b.input(0, 2, f, k) = b.Y(0, 0, f, k);
      b.input(0, 3, f, k) = b.Y(0, 1, f, k);
    }
  }
  b.frame_times.push_back(UNet::buffer_frame_times(K, schedule));
  b.schedules.push_back(schedule);
  return b;
}

TrainingBatch concat_batches(const std::vector<TrainingBatch>& items) {
  if (items.empty()) throw ConfigError("concat_batches: no items");
  auto cat = [&](Array4 TrainingBatch::*field) {
    Shape4 s = (items.front().*field).shape();
    const std::size_t per = s.size() / s.batch;
    s.batch = 0;
    for (const auto& it : items) s.batch += (it.*field).shape().batch;
    Array4 out(s);
    std::size_t pos = 0;
    for (const auto& it : items) {
      const auto v = (it.*field).values();
      if (v.size() % per) throw ShapeError("concat_batches: items differ in shape");
      std::copy(v.begin(), v.end(), out.values().begin() + static_cast<std::ptrdiff_t>(pos));
      pos += v.size();
    }
    if (pos != out.size()) throw ShapeError("concat_batches: items differ in shape");
    return out;
  };
  TrainingBatch b;
  b.input = cat(&TrainingBatch::input);
  b.X0 = cat(&TrainingBatch::X0);
  b.Y = cat(&TrainingBatch::Y);
  b.Z = cat(&TrainingBatch::Z);
  b.Sigma = cat(&TrainingBatch::Sigma);
  b.A = cat(&TrainingBatch::A);
  for (const auto& it : items) {
    b.schedules.insert(b.schedules.end(), it.schedules.begin(), it.schedules.end());
    b.frame_times.insert(b.frame_times.end(), it.frame_times.begin(), it.frame_times.end());
  }
  return b;
}

Array4 dsm_target(const Array4& Z, const Array4& Sigma) {
  const auto& zs = Z.shape();
  const auto& ss = Sigma.shape();
  if (zs.channels != 2 || ss.channels != 1 || zs.batch != ss.batch || zs.freq != ss.freq || zs.time != ss.time) {
    throw ShapeError("dsm: Z " + zs.str() + " and Sigma " + ss.str() + " are incompatible");
  }
  Array4 target(zs);
  for (std::size_t n = 0; n < zs.batch; ++n)
    for (std::size_t f = 0; f < zs.freq; ++f)
      for (std::size_t k = 0; k < zs.time; ++k) {
        const double s = Sigma(n, 0, f, k);
        if (!(s > 0.0)) throw DomainError("dsm: zero standard deviation in Sigma");
        target(n, 0, f, k) = -Z(n, 0, f, k) / s;
        target(n, 1, f, k) = -Z(n, 1, f, k) / s;
      }
  return target;
}

double dsm_loss(const Array4& out, const Array4& Z, const Array4& Sigma) {
  return mean_sq_error(out, dsm_target(Z, Sigma));
}

double dp_loss(const Array4& out, const Array4& A) { return mean_sq_error(out, A); }

Array4 loss_gradient(const Array4& out, const Array4& target) {
  if (!(out.shape() == target.shape())) throw ShapeError("loss_gradient: shape mismatch");
  const double scale = 2.0 / complex_count(out);
  Array4 g(out.shape());
  auto gv = g.values();
  const auto o = out.values();
  const auto t = target.values();
  for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = scale * (o[i] - t[i]);
  return g;
}

Var dsm_loss(Tape& tape, Var out, const Array4& Z, const Array4& Sigma) {
  const Array4 target = dsm_target(Z, Sigma);
  return ops::squared_error(tape, out, target, 1.0 / complex_count(target));
}

Var dp_loss(Tape& tape, Var out, const Array4& A) {
  return ops::squared_error(tape, out, A, 1.0 / complex_count(A));
}

}  // namespace dbuf
