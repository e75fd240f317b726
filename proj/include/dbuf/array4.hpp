#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dbuf {

// (batch, channels, freq, time), time innermost.
struct Shape4 {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t freq = 0;
  std::size_t time = 0;

  std::size_t size() const noexcept { return batch * channels * freq * time; }
  std::string str() const;
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

class Array4 {
 public:
  Array4() = default;
  explicit Array4(Shape4 shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}

  const Shape4& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t f, std::size_t t) const noexcept {
    return ((n * shape_.channels + c) * shape_.freq + f) * shape_.time + t;
  }
  double& operator()(std::size_t n, std::size_t c, std::size_t f, std::size_t t) noexcept {
    return data_[offset(n, c, f, t)];
  }
  double operator()(std::size_t n, std::size_t c, std::size_t f, std::size_t t) const noexcept {
    return data_[offset(n, c, f, t)];
  }

  void fill(double v);
  void add_inplace(const Array4& other);  // shapes must match
  bool all_finite() const noexcept;

  friend bool operator==(const Array4&, const Array4&) = default;

 private:
  Shape4 shape_;
  std::vector<double> data_;
};

struct Stride2 {
  std::size_t freq = 1;
  std::size_t time = 1;
};

// Explicit zero padding per side; convolutions never pad implicitly.
struct Pad2 {
  std::size_t freq_lo = 0;
  std::size_t freq_hi = 0;
  std::size_t time_lo = 0;
  std::size_t time_hi = 0;
};

enum class Axis { Freq, Time };

// Kernel layout (out_channels, in_channels, k_freq, k_time). Output length per
// axis is floor((n + pad_lo + pad_hi - k) / s) + 1.
Shape4 conv2d_output_shape(const Shape4& x, const Shape4& kernel, Stride2 stride, Pad2 pad);
Array4 conv2d(const Array4& x, const Array4& kernel, std::span<const double> bias, Stride2 stride, Pad2 pad);
// Accumulates into gx / gkernel / gbias when non-null.
void conv2d_backward(const Array4& x, const Array4& kernel, const Array4& gy, Stride2 stride, Pad2 pad, Array4* gx,
                     Array4* gkernel, std::span<double> gbias);

// Adjoint of the unpadded conv2d with the same kernel. A kernel of shape
// (C_x, C_y, kf, kt) maps C_x input channels to C_y output channels; output
// length per axis is (m - 1) * s + k.
Shape4 conv_transpose2d_output_shape(const Shape4& x, const Shape4& kernel, Stride2 stride);
Array4 conv_transpose2d(const Array4& x, const Array4& kernel, std::span<const double> bias, Stride2 stride);
void conv_transpose2d_backward(const Array4& x, const Array4& kernel, const Array4& gy, Stride2 stride, Array4* gx,
                               Array4* gkernel, std::span<double> gbias);

// Per-group statistics accumulated over channels-in-group, all freq bins and
// every time index <= tau.
struct GroupNormStats {
  std::vector<double> mean;  // (batch, groups, time)
  std::vector<double> inv_std;
  std::vector<double> count;  // elements accumulated up to tau (per time index)
};
Array4 cumulative_group_norm(const Array4& x, std::span<const double> gamma, std::span<const double> beta,
                             std::size_t groups, double eps, GroupNormStats* stats = nullptr);
void cumulative_group_norm_backward(const Array4& x, std::span<const double> gamma, std::size_t groups,
                                    const GroupNormStats& stats, const Array4& gy, Array4* gx,
                                    std::span<double> ggamma, std::span<double> gbeta);

double silu(double x) noexcept;
double silu_grad(double x) noexcept;

}  // namespace dbuf
