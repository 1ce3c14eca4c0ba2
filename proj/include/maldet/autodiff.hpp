#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "maldet/ndarray.hpp"

namespace maldet::nd {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const noexcept { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const NumArray& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Pullback of one recorded operation. `grad_in[i]` is null for inputs that
/// do not need a gradient; otherwise the pullback adds its contribution.
using BackwardFn =
    std::function<void(const NumArray& out, const NumArray& grad_out, std::span<NumArray* const> grad_in)>;

/// Append-only record of executed operations.
///
/// One tape per forward/backward pass. Nodes live in a deque so references to
/// recorded values stay valid while later operations append. With gradients
/// disabled nothing is tracked and the tape is just an evaluator.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(NumArray value);
  /// A leaf that receives a gradient (a constant when gradients are disabled).
  Var parameter(NumArray value);

  /// Records the result of an operation. Values are checked for finiteness.
  Var record(NumArray value, std::initializer_list<Var> inputs, BackwardFn backward, const char* op);
  Var record(NumArray value, const std::vector<Var>& inputs, BackwardFn backward, const char* op);

  const NumArray& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse sweep from a scalar `loss`. Returns one gradient per entry of
  /// `params`, in order. Throws DisconnectedGraph if a parameter does not
  /// reach the loss.
  std::vector<NumArray> backward(Var loss, std::span<const Var> params) const;

 private:
  struct Node {
    NumArray value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  bool grad_enabled_;
};

inline const NumArray& Var::value() const { return tape_->value(*this); }

// Differentiable operations. None of them mutates its inputs.

/// (m x k) * (k x n).
Var matmul(Var a, Var b);
/// Elementwise add; `b` may also match the trailing dimensions of `a` and is
/// then broadcast over the leading axes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sigmoid(Var a);
Var tanh(Var a);
/// max(0, x) with subgradient 0 at x == 0.
Var relu(Var a);
/// Rows of `table` (rows x d) selected by `ids`; result is (ids.size() x d).
Var gather_rows(Var table, std::span<const std::int32_t> ids);
/// Windowed max over the time axis (second to last) of a rank-2 (L x C) or
/// rank-3 (B x L x C) array. Output length floor((L - window) / stride) + 1.
/// Ties resolve to the earliest position.
Var max_pool_1d(Var a, std::size_t window, std::size_t stride);
/// Valid 1-D convolution, stride 1. `x` is (L x C) or (B x L x C), `weight` is
/// (F x K x C) and `bias` is (F). Output is (L-K+1 x F), batched likewise.
Var conv1d(Var x, Var weight, Var bias);
Var concat(Var a, Var b, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length);
/// Index `index` of `axis`, with that axis removed.
Var select(Var a, std::size_t axis, std::size_t index);
/// Stacks equally shaped arrays along a new axis.
Var stack(const std::vector<Var>& parts, std::size_t axis);
Var reshape(Var a, Shape shape);
Var sum(Var a);
Var mean(Var a);

}  // namespace maldet::nd
