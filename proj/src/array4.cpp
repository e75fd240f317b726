#include "dbuf/array4.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "dbuf/error.hpp"

namespace dbuf {

std::string Shape4::str() const {
  return "(" + std::to_string(batch) + ", " + std::to_string(channels) + ", " + std::to_string(freq) + ", " +
         std::to_string(time) + ")";
}

void Array4::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Array4::add_inplace(const Array4& other) {
  if (!(other.shape_ == shape_)) throw ShapeError("add_inplace: " + shape_.str() + " vs " + other.shape_.str());
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

bool Array4::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

using idx = std::ptrdiff_t;

// Output positions o in [lo, hi) whose tap `a` lands inside the unpadded input,
// i.e. 0 <= o * s + a - p < n_in.
struct Range {
  idx lo = 0;
  idx hi = 0;
  idx len() const noexcept { return hi > lo ? hi - lo : 0; }
};

Range tap_range(std::size_t n_out, std::size_t n_in, std::size_t s, std::size_t a, std::size_t p) {
  Range r;
  const idx si = static_cast<idx>(s);
  const idx shift = static_cast<idx>(a) - static_cast<idx>(p);  // input = o*s + shift
  r.lo = shift < 0 ? (-shift + si - 1) / si : 0;
  const idx top = static_cast<idx>(n_in) - 1 - shift;
  if (top < 0) return {0, 0};
  r.hi = std::min<idx>(static_cast<idx>(n_out), top / si + 1);
  return r;
}

// Patch matrix of one batch item: row (i, a, b), column (fo, to) holds
// src(n, i, fo*sf + a - pf, to*st + b - pt), zero outside the input.
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<RowMat>;
using CMapR = Eigen::Map<const RowMat>;

struct Geometry {
  std::size_t ch, kf, kt, fo, to;  // patch channels, kernel, output grid
  Stride2 s;
  std::size_t pf, pt;
  std::size_t rows() const noexcept { return ch * kf * kt; }
  std::size_t cols() const noexcept { return fo * to; }
};

void im2col(const Array4& src, std::size_t n, const Geometry& g, RowMat& cols) {
  const auto& xs = src.shape();
  cols.setZero(static_cast<idx>(g.rows()), static_cast<idx>(g.cols()));
  for (std::size_t i = 0; i < g.ch; ++i) {
    for (std::size_t a = 0; a < g.kf; ++a) {
      const Range rf = tap_range(g.fo, xs.freq, g.s.freq, a, g.pf);
      for (std::size_t b = 0; b < g.kt; ++b) {
        const Range rt = tap_range(g.to, xs.time, g.s.time, b, g.pt);
        const idx len = rt.len();
        if (len == 0) continue;
        double* row = cols.data() + ((i * g.kf + a) * g.kt + b) * g.cols();
        const idx st = static_cast<idx>(g.s.time);
        for (idx fo = rf.lo; fo < rf.hi; ++fo) {
          const idx fi = fo * static_cast<idx>(g.s.freq) + static_cast<idx>(a) - static_cast<idx>(g.pf);
          const double* xp = src.data() + src.offset(n, i, static_cast<std::size_t>(fi), 0) +
                             (rt.lo * st + static_cast<idx>(b) - static_cast<idx>(g.pt));
          double* cp = row + fo * static_cast<idx>(g.to) + rt.lo;
          for (idx k = 0; k < len; ++k) cp[k] = xp[k * st];
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates the patch matrix back into dst(n, ...).
void col2im(const RowMat& cols, const Geometry& g, Array4& dst, std::size_t n) {
  const auto& xs = dst.shape();
  for (std::size_t i = 0; i < g.ch; ++i) {
    for (std::size_t a = 0; a < g.kf; ++a) {
      const Range rf = tap_range(g.fo, xs.freq, g.s.freq, a, g.pf);
      for (std::size_t b = 0; b < g.kt; ++b) {
        const Range rt = tap_range(g.to, xs.time, g.s.time, b, g.pt);
        const idx len = rt.len();
        if (len == 0) continue;
        const double* row = cols.data() + ((i * g.kf + a) * g.kt + b) * g.cols();
        const idx st = static_cast<idx>(g.s.time);
        for (idx fo = rf.lo; fo < rf.hi; ++fo) {
          const idx fi = fo * static_cast<idx>(g.s.freq) + static_cast<idx>(a) - static_cast<idx>(g.pf);
          double* xp = dst.data() + dst.offset(n, i, static_cast<std::size_t>(fi), 0) +
                       (rt.lo * st + static_cast<idx>(b) - static_cast<idx>(g.pt));
          const double* cp = row + fo * static_cast<idx>(g.to) + rt.lo;
          for (idx k = 0; k < len; ++k) xp[k * st] += cp[k];
        }
      }
    }
  }
}

CMapR plane(const Array4& a, std::size_t n) {
  const auto& s = a.shape();
  return CMapR(a.data() + a.offset(n, 0, 0, 0), static_cast<idx>(s.channels), static_cast<idx>(s.freq * s.time));
}

MapR plane(Array4& a, std::size_t n) {
  const auto& s = a.shape();
  return MapR(a.data() + a.offset(n, 0, 0, 0), static_cast<idx>(s.channels), static_cast<idx>(s.freq * s.time));
}

// Kernel (d0, d1, kf, kt) viewed as d0 x (d1 kf kt).
CMapR kernel_matrix(const Array4& w) {
  const auto& s = w.shape();
  return CMapR(w.data(), static_cast<idx>(s.batch), static_cast<idx>(s.channels * s.freq * s.time));
}

MapR kernel_matrix(Array4& w) {
  const auto& s = w.shape();
  return MapR(w.data(), static_cast<idx>(s.batch), static_cast<idx>(s.channels * s.freq * s.time));
}

void add_bias(Array4& y, std::span<const double> bias) {
  if (bias.empty()) return;
  const auto& s = y.shape();
  if (bias.size() != s.channels) throw ShapeError("conv: bias length does not match output channels");
  const std::size_t plane = s.freq * s.time;
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t c = 0; c < s.channels; ++c) {
      double* p = y.data() + y.offset(n, c, 0, 0);
      std::fill(p, p + plane, bias[c]);
    }
  }
}

void bias_grad(const Array4& gy, std::span<double> gbias) {
  if (gbias.empty()) return;
  const auto& s = gy.shape();
  const std::size_t plane = s.freq * s.time;
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t c = 0; c < s.channels; ++c) {
      const double* p = gy.data() + gy.offset(n, c, 0, 0);
      double acc = 0.0;
      for (std::size_t k = 0; k < plane; ++k) acc += p[k];
      gbias[c] += acc;
    }
  }
}

}  // namespace

Shape4 conv2d_output_shape(const Shape4& x, const Shape4& kernel, Stride2 stride, Pad2 pad) {
  if (x.channels != kernel.channels) {
    throw ShapeError("conv2d: input channels " + std::to_string(x.channels) + " != kernel in-channels " +
                     std::to_string(kernel.channels));
  }
  if (stride.freq == 0 || stride.time == 0) throw ShapeError("conv2d: zero stride");
  const std::size_t pf = x.freq + pad.freq_lo + pad.freq_hi;
  const std::size_t pt = x.time + pad.time_lo + pad.time_hi;
  if (kernel.freq > pf || kernel.time > pt || kernel.freq == 0 || kernel.time == 0) {
    throw ShapeError("conv2d: kernel " + kernel.str() + " larger than padded input " + x.str());
  }
  return {x.batch, kernel.batch, (pf - kernel.freq) / stride.freq + 1, (pt - kernel.time) / stride.time + 1};
}

Array4 conv2d(const Array4& x, const Array4& kernel, std::span<const double> bias, Stride2 stride, Pad2 pad) {
  Array4 y(conv2d_output_shape(x.shape(), kernel.shape(), stride, pad));
  add_bias(y, bias);
  const auto& ys = y.shape();
  const auto& ks = kernel.shape();
  const Geometry g{ks.channels, ks.freq, ks.time, ys.freq, ys.time, stride, pad.freq_lo, pad.time_lo};
  RowMat cols;
  for (std::size_t n = 0; n < ys.batch; ++n) {
    im2col(x, n, g, cols);
    plane(y, n).noalias() += kernel_matrix(kernel) * cols;
  }
  return y;
}

void conv2d_backward(const Array4& x, const Array4& kernel, const Array4& gy, Stride2 stride, Pad2 pad, Array4* gx,
                     Array4* gkernel, std::span<double> gbias) {
  if (!(gy.shape() == conv2d_output_shape(x.shape(), kernel.shape(), stride, pad))) {
    throw ShapeError("conv2d_backward: gradient shape mismatch");
  }
  const auto& ys = gy.shape();
  const auto& ks = kernel.shape();
  const Geometry g{ks.channels, ks.freq, ks.time, ys.freq, ys.time, stride, pad.freq_lo, pad.time_lo};
  RowMat cols;
  for (std::size_t n = 0; n < ys.batch; ++n) {
    if (gx) {
      cols.noalias() = kernel_matrix(kernel).transpose() * plane(gy, n);
      col2im(cols, g, *gx, n);
    }
    if (gkernel) {
      im2col(x, n, g, cols);
      kernel_matrix(*gkernel).noalias() += plane(gy, n) * cols.transpose();
    }
  }
  bias_grad(gy, gbias);
}

Shape4 conv_transpose2d_output_shape(const Shape4& x, const Shape4& kernel, Stride2 stride) {
  if (x.channels != kernel.batch) {
    throw ShapeError("conv_transpose2d: input channels " + std::to_string(x.channels) + " != kernel dim 0 " +
                     std::to_string(kernel.batch));
  }
  if (stride.freq == 0 || stride.time == 0) throw ShapeError("conv_transpose2d: zero stride");
  if (x.freq == 0 || x.time == 0) return {x.batch, kernel.channels, 0, 0};
  return {x.batch, kernel.channels, (x.freq - 1) * stride.freq + kernel.freq, (x.time - 1) * stride.time + kernel.time};
}

Array4 conv_transpose2d(const Array4& x, const Array4& kernel, std::span<const double> bias, Stride2 stride) {
  Array4 y(conv_transpose2d_output_shape(x.shape(), kernel.shape(), stride));
  add_bias(y, bias);
  const auto& xs = x.shape();
  const auto& ks = kernel.shape();
  const Geometry g{ks.channels, ks.freq, ks.time, xs.freq, xs.time, stride, 0, 0};
  RowMat cols;
  for (std::size_t n = 0; n < xs.batch; ++n) {
    cols.noalias() = kernel_matrix(kernel).transpose() * plane(x, n);
    col2im(cols, g, y, n);
  }
  return y;
}

void conv_transpose2d_backward(const Array4& x, const Array4& kernel, const Array4& gy, Stride2 stride, Array4* gx,
                               Array4* gkernel, std::span<double> gbias) {
  if (!(gy.shape() == conv_transpose2d_output_shape(x.shape(), kernel.shape(), stride))) {
    throw ShapeError("conv_transpose2d_backward: gradient shape mismatch");
  }
  const auto& xs = x.shape();
  const auto& ks = kernel.shape();
  const Geometry g{ks.channels, ks.freq, ks.time, xs.freq, xs.time, stride, 0, 0};
  RowMat cols;
  for (std::size_t n = 0; n < xs.batch; ++n) {
    im2col(gy, n, g, cols);
    if (gx) plane(*gx, n).noalias() += kernel_matrix(kernel) * cols;
    if (gkernel) kernel_matrix(*gkernel).noalias() += plane(x, n) * cols.transpose();
  }
  bias_grad(gy, gbias);
}

Array4 cumulative_group_norm(const Array4& x, std::span<const double> gamma, std::span<const double> beta,
                             std::size_t groups, double eps, GroupNormStats* stats) {
  const auto& s = x.shape();
  if (groups == 0 || s.channels % groups != 0) throw ShapeError("cumulative_group_norm: channels not divisible by groups");
  if (gamma.size() != s.channels || beta.size() != s.channels) throw ShapeError("cumulative_group_norm: affine size");
  if (!(eps > 0.0)) throw ConfigError("cumulative_group_norm: eps must be positive");
  const std::size_t cg = s.channels / groups;
  const std::size_t T = s.time;
  GroupNormStats local;
  GroupNormStats& st = stats ? *stats : local;
  st.mean.assign(s.batch * groups * T, 0.0);
  st.inv_std.assign(s.batch * groups * T, 0.0);
  st.count.assign(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) st.count[t] = static_cast<double>((t + 1) * cg * s.freq);

  Array4 y(s);
  std::vector<double> s1(T), s2(T);
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t g = 0; g < groups; ++g) {
      std::fill(s1.begin(), s1.end(), 0.0);
      std::fill(s2.begin(), s2.end(), 0.0);
      for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
        for (std::size_t f = 0; f < s.freq; ++f) {
          const double* row = x.data() + x.offset(n, c, f, 0);
          for (std::size_t t = 0; t < T; ++t) {
            s1[t] += row[t];
            s2[t] += row[t] * row[t];
          }
        }
      }
      double c1 = 0.0, c2 = 0.0;
      double* mean = st.mean.data() + (n * groups + g) * T;
      double* inv = st.inv_std.data() + (n * groups + g) * T;
      for (std::size_t t = 0; t < T; ++t) {
        c1 += s1[t];
        c2 += s2[t];
        const double m = c1 / st.count[t];
        const double var = std::max(c2 / st.count[t] - m * m, 0.0);
        mean[t] = m;
        inv[t] = 1.0 / std::sqrt(var + eps);
      }
      for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
        for (std::size_t f = 0; f < s.freq; ++f) {
          const double* row = x.data() + x.offset(n, c, f, 0);
          double* out = y.data() + y.offset(n, c, f, 0);
          for (std::size_t t = 0; t < T; ++t) out[t] = gamma[c] * (row[t] - mean[t]) * inv[t] + beta[c];
        }
      }
    }
  }
  return y;
}

void cumulative_group_norm_backward(const Array4& x, std::span<const double> gamma, std::size_t groups,
                                    const GroupNormStats& st, const Array4& gy, Array4* gx,
                                    std::span<double> ggamma, std::span<double> gbeta) {
  const auto& s = x.shape();
  const std::size_t cg = s.channels / groups;
  const std::size_t T = s.time;
  std::vector<double> sum_g(T), sum_gx(T), r1(T), r2(T);
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t g = 0; g < groups; ++g) {
      const double* mean = st.mean.data() + (n * groups + g) * T;
      const double* inv = st.inv_std.data() + (n * groups + g) * T;
      std::fill(sum_g.begin(), sum_g.end(), 0.0);
      std::fill(sum_gx.begin(), sum_gx.end(), 0.0);
      for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
        double gg = 0.0, gb = 0.0;
        for (std::size_t f = 0; f < s.freq; ++f) {
          const double* row = x.data() + x.offset(n, c, f, 0);
          const double* grow = gy.data() + gy.offset(n, c, f, 0);
          for (std::size_t t = 0; t < T; ++t) {
            const double centered = row[t] - mean[t];
            gg += grow[t] * centered * inv[t];
            gb += grow[t];
            const double gxhat = grow[t] * gamma[c];
            sum_g[t] += gxhat;
            sum_gx[t] += gxhat * centered;
          }
        }
        if (!ggamma.empty()) ggamma[c] += gg;
        if (!gbeta.empty()) gbeta[c] += gb;
      }
      if (!gx) continue;
      // d/dS1 and d/dS2 of the running sums at each tau, then suffix-summed:
      // x at time t feeds every tau >= t.
      double acc1 = 0.0, acc2 = 0.0;
      for (std::size_t tt = T; tt-- > 0;) {
        const double i3 = inv[tt] * inv[tt] * inv[tt];
        const double dvar = -0.5 * i3 * sum_gx[tt];
        const double dmean = -inv[tt] * sum_g[tt] - 2.0 * mean[tt] * dvar;
        acc1 += dmean / st.count[tt];
        acc2 += dvar / st.count[tt];
        r1[tt] = acc1;
        r2[tt] = acc2;
      }
      for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
        for (std::size_t f = 0; f < s.freq; ++f) {
          const double* row = x.data() + x.offset(n, c, f, 0);
          const double* grow = gy.data() + gy.offset(n, c, f, 0);
          double* out = gx->data() + gx->offset(n, c, f, 0);
          for (std::size_t t = 0; t < T; ++t) {
            out[t] += grow[t] * gamma[c] * inv[t] + r1[t] + 2.0 * row[t] * r2[t];
          }
        }
      }
    }
  }
}

double silu(double x) noexcept { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) noexcept {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

}  // namespace dbuf
