#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dbuf/array4.hpp"
#include "dbuf/rng.hpp"

namespace dbuf {

struct Parameter {
  Array4 value;
  Array4 grad;
};

// Named parameters with matching gradient slots. Iteration order is the
// lexicographic name order, which keeps optimizer updates and checkpoints
// deterministic.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Shape4 shape);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad();
  std::size_t count() const noexcept;  // scalar parameter count
  std::map<std::string, Parameter>& items() noexcept { return params_; }
  const std::map<std::string, Parameter>& items() const noexcept { return params_; }

  // Bumped whenever values change through the store's owner (optimizer step,
  // checkpoint load); lets callers cache derived tensors.
  std::uint64_t version() const noexcept { return version_; }
  void touch() noexcept { ++version_; }

 private:
  std::map<std::string, Parameter> params_;
  std::uint64_t version_ = 0;
};

class Tape;

// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return id_ != kInvalid; }

 private:
  friend class Tape;
  explicit Var(std::size_t id) : id_(id) {}
  static constexpr std::size_t kInvalid = static_cast<std::size_t>(-1);
  std::size_t id_ = kInvalid;
};

// Reverse-mode recorder for the handful of array ops the UNet uses. One tape
// per forward pass; backward() may be called once.
class Tape {
 public:
  // Called with the node's own handle during backward().
  using Backward = std::function<void(Tape&, Var self)>;

  Var leaf(Array4 value, bool requires_grad = false);
  Var param(Parameter& p);

  const Array4& value(Var v) const;
  // Gradient of the last backward() w.r.t. v; zeros if v did not influence it.
  const Array4& grad(Var v);
  bool requires_grad(Var v) const;

  // `out` must hold a single element.
  void backward(Var out);
  // Vector-Jacobian product seeded with `cotangent` (same shape as out).
  void backward(Var out, const Array4& cotangent);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Op plumbing. `parents` decide whether the result needs a gradient;
  // `back` runs only in that case.
  Var record(Array4 value, std::initializer_list<Var> parents, Backward back);
  // Gradient slot of v, allocated on first touch.
  Array4& grad_slot(Var v);

 private:
  struct Node {
    Array4 value;
    Array4 grad;
    bool requires_grad = false;
    bool has_grad = false;
    Parameter* param = nullptr;
    Backward back;
  };
  Node& node(Var v);
  const Node& node(Var v) const;
  void run_backward(Var out);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

namespace ops {

Var conv2d(Tape& tape, Var x, Var kernel, Var bias, Stride2 stride, Pad2 pad);
Var conv_transpose2d(Tape& tape, Var x, Var kernel, Var bias, Stride2 stride);
Var cumulative_group_norm(Tape& tape, Var x, Var gamma, Var beta, std::size_t groups, double eps);
Var silu(Tape& tape, Var x);
Var add(Tape& tape, Var a, Var b);
// x (N, C, F, T) + e (N or 1, C, 1, T), broadcast over freq (and batch when e.batch == 1).
Var add_broadcast_freq(Tape& tape, Var x, Var e);
Var concat_channels(Tape& tape, Var a, Var b);
// sigmoid(logit) (N, 1, F, T) times channels (x_channel, x_channel + 1) of x,
// giving (N, 2, F, T).
Var sigmoid_gain(Tape& tape, Var logit, Var x, std::size_t x_channel);
Var slice(Tape& tape, Var x, Axis axis, std::size_t start, std::size_t len);
// scale * sum (x - target)^2 as a single-element array.
Var squared_error(Tape& tape, Var x, const Array4& target, double scale);
Var sum(Tape& tape, Var x);

}  // namespace ops

}  // namespace dbuf
