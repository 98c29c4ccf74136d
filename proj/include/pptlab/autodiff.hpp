#pragma once

// Reverse-mode differentiation over dense float64 tensors.
//
// A Tape records every operation in creation order; backward() walks the record
// in reverse, so gradient accumulation order is fixed and runs are bit-reproducible.
// Parameters are bound by reference: their gradients are added into Tensor::grad
// when backward() finishes. Constants never receive gradients.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "pptlab/tensor.hpp"

namespace pptlab::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  // Gradient after Tape::backward (zeros if the node was not reached).
  std::span<const double> grad() const;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Records a copy of `param`; backward() adds d(root)/d(param) into param.grad.
  Var parameter(Tensor& param);

  // Seeds d(root) = 1; root must hold a single element.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Op-construction interface used by the primitives.
  // Called with the tape and the id of the node being differentiated.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::vector<double>& grad_buffer(std::size_t id);
  std::span<const double> grad(std::size_t id) const;

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool needs_grad = false;
    Tensor* param = nullptr;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

// ---- primitives ---------------------------------------------------------------------
// Shapes are [rows, cols] unless stated; tensors with more leading dims are treated
// as their flattened rows.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// x[r, offset + c] += bias[c] for every row
Var add_bias(Var x, Var bias, std::size_t offset = 0);
Var matmul(Var a, Var b);
// x W + b
Var linear(Var x, Var weight, Var bias);
Var mul_const(Var a, const Tensor& weights);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var gelu(Var a);
Var sum(Var a);
Var mean(Var a);
Var softmax(Var a);
Var log_softmax(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Fused causal multi-head attention; qkv is [batch*seq, 3*width], result [batch*seq, width].
Var causal_attention(Var qkv, std::size_t batch, std::size_t seq, std::size_t heads);
// Embedding lookup: out[r, :] = table[indices[r], :]
Var gather_rows(Var table, std::span<const std::size_t> indices);
// out[r] = x[r, indices[r]]
Var pick(Var x, std::span<const std::size_t> indices);
// Sum over rows of -log softmax(logits)[r, targets[r]].
Var cross_entropy(Var logits, std::span<const std::size_t> targets);
// Sum of squared differences to a constant target.
Var squared_error(Var pred, const Tensor& target);

}  // namespace pptlab::ad
