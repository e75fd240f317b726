#include "dbuf/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "dbuf/error.hpp"

namespace dbuf {

Parameter& ParamStore::add(const std::string& name, Shape4 shape) {
  if (params_.count(name)) throw ConfigError("param store: duplicate parameter " + name);
  auto& p = params_[name];
  p.value = Array4(shape);
  p.grad = Array4(shape);
  return p;
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("param store: unknown parameter " + name);
  return it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("param store: unknown parameter " + name);
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p.grad.fill(0.0);
}

std::size_t ParamStore::count() const noexcept {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

Tape::Node& Tape::node(Var v) {
  if (!v.valid() || v.id_ >= nodes_.size()) throw StateError("tape: invalid variable handle");
  return nodes_[v.id_];
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id_ >= nodes_.size()) throw StateError("tape: invalid variable handle");
  return nodes_[v.id_];
}

Var Tape::leaf(Array4 value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var(nodes_.size() - 1);
}

const Array4& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Array4& Tape::grad_slot(Var v) {
  Node& n = node(v);
  if (!n.has_grad) {
    n.grad = Array4(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

const Array4& Tape::grad(Var v) { return grad_slot(v); }

Var Tape::record(Array4 value, std::initializer_list<Var> parents, Backward back) {
  Node n;
  n.value = std::move(value);
  for (Var p : parents) {
    if (p.valid() && node(p).requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var(nodes_.size() - 1);
}

void Tape::backward(Var out) {
  const Node& n = node(out);
  if (n.value.size() != 1) throw ShapeError("backward: output must be a single element, got " + n.value.shape().str());
  Array4 seed(n.value.shape(), 1.0);
  backward(out, seed);
}

void Tape::backward(Var out, const Array4& cotangent) {
  if (nodes_.empty()) throw StateError("backward: nothing was recorded");
  if (backward_done_) throw StateError("backward: tape already consumed");
  Node& n = node(out);
  if (!(cotangent.shape() == n.value.shape())) throw ShapeError("backward: cotangent shape mismatch");
  backward_done_ = true;
  grad_slot(out).add_inplace(cotangent);
  run_backward(out);
}

void Tape::run_backward(Var out) {
  for (std::size_t i = out.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.back) n.back(*this, Var(i));
  }
  for (auto& n : nodes_) {
    if (n.param && n.has_grad) n.param->grad.add_inplace(n.grad);
  }
}


namespace ops {

namespace {

std::span<const double> values_or_empty(const Tape& tape, Var v) {
  if (!v.valid()) return {};
  return tape.value(v).values();
}

Array4* grad_if(Tape& t, Var v) { return v.valid() && t.requires_grad(v) ? &t.grad_slot(v) : nullptr; }

std::span<double> grad_span_if(Tape& t, Var v) {
  Array4* g = grad_if(t, v);
  return g ? g->values() : std::span<double>{};
}

const Shape4 kScalar{1, 1, 1, 1};

}  // namespace

Var conv2d(Tape& tape, Var x, Var kernel, Var bias, Stride2 stride, Pad2 pad) {
  Array4 y = dbuf::conv2d(tape.value(x), tape.value(kernel), values_or_empty(tape, bias), stride, pad);
  return tape.record(std::move(y), {x, kernel, bias}, [=](Tape& t, Var self) {
    dbuf::conv2d_backward(t.value(x), t.value(kernel), t.grad_slot(self), stride, pad, grad_if(t, x),
                          grad_if(t, kernel), grad_span_if(t, bias));
  });
}

Var conv_transpose2d(Tape& tape, Var x, Var kernel, Var bias, Stride2 stride) {
  Array4 y = dbuf::conv_transpose2d(tape.value(x), tape.value(kernel), values_or_empty(tape, bias), stride);
  return tape.record(std::move(y), {x, kernel, bias}, [=](Tape& t, Var self) {
    dbuf::conv_transpose2d_backward(t.value(x), t.value(kernel), t.grad_slot(self), stride, grad_if(t, x),
                                    grad_if(t, kernel), grad_span_if(t, bias));
  });
}

Var cumulative_group_norm(Tape& tape, Var x, Var gamma, Var beta, std::size_t groups, double eps) {
  auto stats = std::make_shared<GroupNormStats>();
  Array4 y = dbuf::cumulative_group_norm(tape.value(x), tape.value(gamma).values(), tape.value(beta).values(), groups,
                                         eps, stats.get());
  return tape.record(std::move(y), {x, gamma, beta}, [=](Tape& t, Var self) {
    dbuf::cumulative_group_norm_backward(t.value(x), t.value(gamma).values(), groups, *stats, t.grad_slot(self),
                                         grad_if(t, x), grad_span_if(t, gamma), grad_span_if(t, beta));
  });
}

Var silu(Tape& tape, Var x) {
  const Array4& xv = tape.value(x);
  Array4 y(xv.shape());
  auto yo = y.values();
  auto xi = xv.values();
  for (std::size_t i = 0; i < xi.size(); ++i) yo[i] = dbuf::silu(xi[i]);
  return tape.record(std::move(y), {x}, [=](Tape& t, Var self) {
    auto gx = t.grad_slot(x).values();
    auto gy = t.grad_slot(self).values();
    auto xs = t.value(x).values();
    for (std::size_t i = 0; i < xs.size(); ++i) gx[i] += gy[i] * silu_grad(xs[i]);
  });
}

Var add(Tape& tape, Var a, Var b) {
  if (!(tape.value(a).shape() == tape.value(b).shape())) {
    throw ShapeError("add: shape mismatch " + tape.value(a).shape().str() + " vs " + tape.value(b).shape().str());
  }
  Array4 y = tape.value(a);
  y.add_inplace(tape.value(b));
  return tape.record(std::move(y), {a, b}, [=](Tape& t, Var self) {
    if (t.requires_grad(a)) t.grad_slot(a).add_inplace(t.grad_slot(self));
    if (t.requires_grad(b)) t.grad_slot(b).add_inplace(t.grad_slot(self));
  });
}

Var add_broadcast_freq(Tape& tape, Var x, Var e) {
  const Shape4 xs = tape.value(x).shape();
  const Shape4 es = tape.value(e).shape();
  if (es.channels != xs.channels || es.freq != 1 || es.time != xs.time || (es.batch != 1 && es.batch != xs.batch)) {
    throw ShapeError("add_broadcast_freq: cannot broadcast " + es.str() + " onto " + xs.str());
  }
  Array4 y = tape.value(x);
  const Array4& ev = tape.value(e);
  for (std::size_t n = 0; n < xs.batch; ++n) {
    const std::size_t ne = es.batch == 1 ? 0 : n;
    for (std::size_t c = 0; c < xs.channels; ++c) {
      const double* erow = ev.data() + ev.offset(ne, c, 0, 0);
      for (std::size_t f = 0; f < xs.freq; ++f) {
        double* row = &y(n, c, f, 0);
        for (std::size_t k = 0; k < xs.time; ++k) row[k] += erow[k];
      }
    }
  }
  return tape.record(std::move(y), {x, e}, [=](Tape& t, Var self) {
    const Array4& gy = t.grad_slot(self);
    if (t.requires_grad(x)) t.grad_slot(x).add_inplace(gy);
    if (!t.requires_grad(e)) return;
    Array4& ge = t.grad_slot(e);
    for (std::size_t n = 0; n < xs.batch; ++n) {
      const std::size_t ne = es.batch == 1 ? 0 : n;
      for (std::size_t c = 0; c < xs.channels; ++c) {
        double* erow = &ge(ne, c, 0, 0);
        for (std::size_t f = 0; f < xs.freq; ++f) {
          const double* row = gy.data() + gy.offset(n, c, f, 0);
          for (std::size_t k = 0; k < xs.time; ++k) erow[k] += row[k];
        }
      }
    }
  });
}

Var concat_channels(Tape& tape, Var a, Var b) {
  const Shape4 as = tape.value(a).shape();
  const Shape4 bs = tape.value(b).shape();
  if (as.batch != bs.batch || as.freq != bs.freq || as.time != bs.time) {
    throw ShapeError("concat_channels: " + as.str() + " vs " + bs.str());
  }
  const std::size_t plane = as.freq * as.time;
  Array4 y({as.batch, as.channels + bs.channels, as.freq, as.time});
  const auto av = tape.value(a).values();
  const auto bv = tape.value(b).values();
  auto yv = y.values();
  for (std::size_t n = 0; n < as.batch; ++n) {
    std::copy_n(av.begin() + n * as.channels * plane, as.channels * plane,
                yv.begin() + n * (as.channels + bs.channels) * plane);
    std::copy_n(bv.begin() + n * bs.channels * plane, bs.channels * plane,
                yv.begin() + (n * (as.channels + bs.channels) + as.channels) * plane);
  }
  return tape.record(std::move(y), {a, b}, [=](Tape& t, Var self) {
    const auto gy = t.grad_slot(self).values();
    const std::size_t ctot = as.channels + bs.channels;
    if (t.requires_grad(a)) {
      auto ga = t.grad_slot(a).values();
      for (std::size_t n = 0; n < as.batch; ++n)
        for (std::size_t i = 0; i < as.channels * plane; ++i) ga[n * as.channels * plane + i] += gy[n * ctot * plane + i];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad_slot(b).values();
      for (std::size_t n = 0; n < bs.batch; ++n)
        for (std::size_t i = 0; i < bs.channels * plane; ++i)
          gb[n * bs.channels * plane + i] += gy[(n * ctot + as.channels) * plane + i];
    }
  });
}

Var sigmoid_gain(Tape& tape, Var logit, Var x, std::size_t x_channel) {
  const Shape4 ls = tape.value(logit).shape();
  const Shape4 xs = tape.value(x).shape();
  if (ls.channels != 1 || x_channel + 2 > xs.channels || ls.batch != xs.batch || ls.freq != xs.freq ||
      ls.time != xs.time) {
    throw ShapeError("sigmoid_gain: cannot apply " + ls.str() + " to channels " + std::to_string(x_channel) + ".." +
                     std::to_string(x_channel + 1) + " of " + xs.str());
  }
  const std::size_t plane = ls.freq * ls.time;
  auto gain = std::make_shared<std::vector<double>>(ls.size());
  Array4 y({ls.batch, 2, ls.freq, ls.time});
  {
    const double* lv = tape.value(logit).data();
    const double* xv = tape.value(x).data();
    for (std::size_t n = 0; n < ls.batch; ++n) {
      const double* xr = xv + (n * xs.channels + x_channel) * plane;
      double* yr = y.data() + n * 2 * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const double s = 1.0 / (1.0 + std::exp(-lv[n * plane + k]));
        (*gain)[n * plane + k] = s;
        yr[k] = s * xr[k];
        yr[plane + k] = s * xr[plane + k];
      }
    }
  }
  return tape.record(std::move(y), {logit, x}, [=](Tape& t, Var self) {
    const double* g = t.grad_slot(self).data();
    const double* xv = t.value(x).data();
    double* gl = t.requires_grad(logit) ? t.grad_slot(logit).data() : nullptr;
    double* gx = t.requires_grad(x) ? t.grad_slot(x).data() : nullptr;
    for (std::size_t n = 0; n < ls.batch; ++n) {
      const std::size_t yo = n * 2 * plane;
      const std::size_t xo = (n * xs.channels + x_channel) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const double s = (*gain)[n * plane + k];
        if (gl) gl[n * plane + k] += s * (1.0 - s) * (g[yo + k] * xv[xo + k] + g[yo + plane + k] * xv[xo + plane + k]);
        if (gx) {
          gx[xo + k] += s * g[yo + k];
          gx[xo + plane + k] += s * g[yo + plane + k];
        }
      }
    }
  });
}

Var slice(Tape& tape, Var x, Axis axis, std::size_t start, std::size_t len) {
  const Shape4 xs = tape.value(x).shape();
  const std::size_t extent = axis == Axis::Time ? xs.time : xs.freq;
  if (start + len > extent) throw ShapeError("slice: range exceeds axis of " + xs.str());
  Shape4 ys = xs;
  (axis == Axis::Time ? ys.time : ys.freq) = len;
  Array4 y(ys);
  const Array4& xv = tape.value(x);
  const std::size_t f0 = axis == Axis::Freq ? start : 0;
  const std::size_t t0 = axis == Axis::Time ? start : 0;
  for (std::size_t n = 0; n < ys.batch; ++n)
    for (std::size_t c = 0; c < ys.channels; ++c)
      for (std::size_t f = 0; f < ys.freq; ++f) std::copy_n(xv.data() + xv.offset(n, c, f + f0, t0), ys.time, &y(n, c, f, 0));
  return tape.record(std::move(y), {x}, [=](Tape& t, Var self) {
    const Array4& gy = t.grad_slot(self);
    Array4& gx = t.grad_slot(x);
    for (std::size_t n = 0; n < ys.batch; ++n)
      for (std::size_t c = 0; c < ys.channels; ++c)
        for (std::size_t f = 0; f < ys.freq; ++f) {
          const double* src = gy.data() + gy.offset(n, c, f, 0);
          double* dst = &gx(n, c, f + f0, t0);
          for (std::size_t k = 0; k < ys.time; ++k) dst[k] += src[k];
        }
  });
}

Var squared_error(Tape& tape, Var x, const Array4& target, double scale) {
  if (!(tape.value(x).shape() == target.shape())) throw ShapeError("squared_error: shape mismatch");
  auto diff = std::make_shared<std::vector<double>>(target.size());
  const auto xv = tape.value(x).values();
  const auto tv = target.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*diff)[i] = xv[i] - tv[i];
    acc += (*diff)[i] * (*diff)[i];
  }
  return tape.record(Array4(kScalar, scale * acc), {x}, [=](Tape& t, Var self) {
    const double g = t.grad_slot(self).values()[0] * 2.0 * scale;
    auto gx = t.grad_slot(x).values();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * (*diff)[i];
  });
}

Var sum(Tape& tape, Var x) {
  double acc = 0.0;
  for (double v : tape.value(x).values()) acc += v;
  return tape.record(Array4(kScalar, acc), {x}, [=](Tape& t, Var self) {
    const double g = t.grad_slot(self).values()[0];
    for (auto& v : t.grad_slot(x).values()) v += g;
  });
}

}  // namespace ops

}  // namespace dbuf
