// Copyright 2026 The EiHi Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "eihi/tensor.hpp"

namespace eihi {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Receives the output gradient and accumulates into the inputs' gradients.
/// `input_grads[i]` is null when input i does not require a gradient.
using BackwardFn =
    std::function<void(const Tensor& out_grad, std::span<Tensor* const> input_grads)>;

/// Linear record of a forward computation for one reverse pass. Not shareable
/// across threads; build one tape per training step.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  /// Internal hook for ops. Checks that `value` is finite (NumericError naming `op`).
  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Reverse pass from a scalar. Gradients of earlier calls are discarded.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient of a requires-grad value after backward(); zeros when `v` was
  /// unreachable from the loss.
  const Tensor& grad(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

// ---- elementwise and reductions ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var square(Var a);
Var log(Var a);
Var relu(Var a);
Var sum(Var a);
Var mean(Var a);

// ---- matrices (rank 2) ----
/// op(A) * op(B) where op transposes when the flag is set.
Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);
/// X (n x in) * W^T (in x out) + b, with W stored (out x in).
Var dense(Var x, Var weight, Var bias);
Var center_columns(Var x);
Var zero_diagonal(Var square_matrix);
Var l2_normalize_rows(Var x);
Var row_dot(Var a, Var b);
Var stack_columns(std::span<const Var> columns);
Var concat_rows(std::span<const Var> blocks);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
Var select_columns(Var x, std::span<const std::size_t> columns);
Var select_column(Var x, std::size_t column);
Var log_softmax_rows(Var x);
Var pick(Var x, std::size_t row, std::size_t column);
/// Mean over rows of -log softmax(logits)[label].
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

// ---- images (n x c x h x w) ----
Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad);
Var max_pool2d(Var x, std::size_t size);
Var avg_pool2d(Var x, std::size_t size);
Var global_mean(Var x);
Var flatten(Var x);

}  // namespace eihi
