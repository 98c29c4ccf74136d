#include "pptlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "pptlab/errors.hpp"
#include "pptlab/kernels.hpp"

namespace pptlab::ad {

const Tensor& Var::value() const { return tape->value(id); }
std::span<const double> Var::grad() const { return tape->grad(id); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Tensor& param) {
  nodes_.push_back(Node{Tensor(param.shape, param.data), {}, true, &param, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [this](std::size_t id) { return nodes_[id].needs_grad; });
  nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(backward) : BackwardFn{}});
  return Var{this, nodes_.size() - 1};
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.size() != node.value.size()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

std::span<const double> Tape::grad(std::size_t id) const {
  const Node& node = nodes_[id];
  return {node.grad.data(), node.grad.size()};
}

void Tape::backward(Var root) {
  if (root.tape != this) throw ContractError("backward: variable belongs to another tape");
  if (value(root.id).size() != 1) {
    throw DimensionError("backward: root must be a scalar, got shape " + shape_str(value(root.id).shape));
  }
  for (auto& node : nodes_) node.grad.clear();
  grad_buffer(root.id)[0] = 1.0;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(*this, id);
  }
  for (auto& node : nodes_) {
    if (node.param == nullptr || node.grad.empty()) continue;
    node.param->ensure_grad();
    for (std::size_t i = 0; i < node.grad.size(); ++i) node.param->grad[i] += node.grad[i];
  }
}

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
  }
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

template <class Forward, class Derivative>
Var unary(Var a, Forward f, Derivative df) {
  const Tensor& x = a.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = f(x.data[i]);
  return a.tape->record(std::move(out), {a.id}, [a, df](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    const auto& x = tape.value(a.id).data;
    const auto& y = tape.value(self).data;
    auto& ga = tape.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

void add_into(Tape& tape, std::size_t id, std::span<const double> g, double factor) {
  if (!tape.needs_grad(id)) return;
  auto& buf = tape.grad_buffer(id);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += factor * g[i];
}

std::vector<double> column_sums(std::span<const double> m, std::size_t rows, std::size_t cols) {
  std::vector<double> out(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += m[r * cols + c];
  return out;
}

Shape with_last(const Shape& s, std::size_t last) {
  Shape out = s;
  if (out.empty()) out.push_back(last);
  else out.back() = last;
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape("add", x, y);
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] + y.data[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [a, b](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    add_into(tape, a.id, g, 1.0);
    add_into(tape, b.id, g, 1.0);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape("sub", x, y);
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] - y.data[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [a, b](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    add_into(tape, a.id, g, 1.0);
    add_into(tape, b.id, g, -1.0);
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape("mul", x, y);
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] * y.data[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [a, b](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    const auto& x = tape.value(a.id).data;
    const auto& y = tape.value(b.id).data;
    if (tape.needs_grad(a.id)) {
      auto& ga = tape.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (tape.needs_grad(b.id)) {
      auto& gb = tape.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Var scale(Var a, double factor) {
  const Tensor& x = a.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] * factor;
  return a.tape->record(std::move(out), {a.id}, [a, factor](Tape& tape, std::size_t self) {
    add_into(tape, a.id, tape.grad(self), factor);
  });
}

Var add_bias(Var x, Var bias, std::size_t offset) {
  require_same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const std::size_t rows = xv.rows(), cols = xv.cols(), width = bv.size();
  if (width == 0 || offset + width > cols) {
    throw DimensionError("add_bias: shape mismatch " + shape_str(xv.shape) + " vs " + shape_str(bv.shape) +
                         " at column " + std::to_string(offset));
  }
  Tensor out = Tensor(xv.shape, xv.data);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) out.data[r * cols + offset + c] += bv.data[c];
  return x.tape->record(std::move(out), {x.id, bias.id}, [x, bias, rows, cols, width, offset](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    add_into(tape, x.id, g, 1.0);
    if (!tape.needs_grad(bias.id)) return;
    auto& gb = tape.grad_buffer(bias.id);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < width; ++c) gb[c] += g[r * cols + offset + c];
  });
}

namespace {

Var matmul_impl(const char* op, Var a, Var b, const Var* bias) {
  const Tensor& x = a.value();
  const Tensor& w = b.value();
  if (w.shape.size() != 2 || x.cols() != w.shape[0] ||
      (bias != nullptr && bias->value().size() != w.shape[1])) {
    std::string msg = std::string(op) + ": shape mismatch " + shape_str(x.shape) + " vs " + shape_str(w.shape);
    if (bias != nullptr) msg += " with bias " + shape_str(bias->value().shape);
    throw DimensionError(msg);
  }
  const std::size_t rows = x.rows(), k = w.shape[0], n = w.shape[1];
  Tensor out(with_last(x.shape, n));
  kernels::gemm_nn(x.data, w.data, out.data, rows, k, n, false);
  std::vector<std::size_t> inputs{a.id, b.id};
  std::size_t bias_id = 0;
  const bool has_bias = bias != nullptr;
  if (has_bias) {
    bias_id = bias->id;
    inputs.push_back(bias_id);
    const auto& bv = bias->value().data;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < n; ++c) out.data[r * n + c] += bv[c];
  }
  return a.tape->record(std::move(out), std::move(inputs),
                        [a, b, has_bias, bias_id, rows, k, n](Tape& tape, std::size_t self) {
                          const auto g = tape.grad(self);
                          if (tape.needs_grad(a.id)) {
                            kernels::gemm_nt(g, tape.value(b.id).data, tape.grad_buffer(a.id), rows, n, k, true);
                          }
                          if (tape.needs_grad(b.id)) {
                            kernels::gemm_tn(tape.value(a.id).data, g, tape.grad_buffer(b.id), k, rows, n, true);
                          }
                          if (has_bias && tape.needs_grad(bias_id)) {
                            add_into(tape, bias_id, column_sums(g, rows, n), 1.0);
                          }
                        });
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  return matmul_impl("matmul", a, b, nullptr);
}

Var linear(Var x, Var weight, Var bias) {
  require_same_tape(x, weight);
  require_same_tape(x, bias);
  return matmul_impl("linear", x, weight, &bias);
}

Var mul_const(Var a, const Tensor& weights) {
  const Tensor& x = a.value();
  require_same_shape("mul_const", x, weights);
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] * weights.data[i];
  return a.tape->record(std::move(out), {a.id}, [a, w = weights.data](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    auto& ga = tape.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * w[i];
  });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.shape);
  // derivative is filled alongside the value so backward needs no second tanh
  auto deriv = std::make_shared<std::vector<double>>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data[i];
    const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    out.data[i] = 0.5 * v * (1.0 + th);
    (*deriv)[i] = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
  }
  return a.tape->record(std::move(out), {a.id}, [a, deriv](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    auto& ga = tape.grad_buffer(a.id);
    const auto& d = *deriv;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * d[i];
  });
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double total = 0.0;
  for (double v : x.data) total += v;
  return a.tape->record(Tensor::scalar(total), {a.id}, [a](Tape& tape, std::size_t self) {
    const double g = tape.grad(self)[0];
    auto& ga = tape.grad_buffer(a.id);
    for (auto& v : ga) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var softmax(Var a) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out(x.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data.data() + r * cols;
    double* yr = out.data.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= total;
  }
  return a.tape->record(std::move(out), {a.id}, [a, rows, cols](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    const auto& y = tape.value(self).data;
    auto& ga = tape.grad_buffer(a.id);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
    }
  });
}

Var log_softmax(Var a) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out(x.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(xr[c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) out.data[r * cols + c] = xr[c] - lse;
  }
  return a.tape->record(std::move(out), {a.id}, [a, rows, cols](Tape& tape, std::size_t self) {
    const auto g = tape.grad(self);
    const auto& y = tape.value(self).data;
    auto& ga = tape.grad_buffer(a.id);
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c)
        ga[r * cols + c] += g[r * cols + c] - std::exp(y[r * cols + c]) * gsum;
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (gain.value().size() != cols || bias.value().size() != cols) {
    throw DimensionError("layer_norm: shape mismatch " + shape_str(xv.shape) + " vs " +
                         shape_str(gain.value().shape) + "/" + shape_str(bias.value().shape));
  }
  Tensor out(xv.shape);
  auto stats = std::make_shared<std::vector<double>>(2 * rows);
  std::span<double> mean_s(stats->data(), rows), rstd_s(stats->data() + rows, rows);
  kernels::layer_norm_forward(xv.data, gain.value().data, bias.value().data, out.data, mean_s, rstd_s,
                              rows, cols, eps);
  return x.tape->record(std::move(out), {x.id, gain.id, bias.id},
                        [x, gain, bias, stats, rows, cols](Tape& tape, std::size_t self) {
                          std::vector<double> dx(rows * cols, 0.0), dg(cols, 0.0), db(cols, 0.0);
                          kernels::layer_norm_backward(tape.value(x.id).data, tape.value(gain.id).data,
                                                       {stats->data(), rows}, {stats->data() + rows, rows},
                                                       tape.grad(self), dx, dg, db, rows, cols);
                          add_into(tape, x.id, dx, 1.0);
                          add_into(tape, gain.id, dg, 1.0);
                          add_into(tape, bias.id, db, 1.0);
                        });
}

Var causal_attention(Var qkv, std::size_t batch, std::size_t seq, std::size_t heads) {
  const Tensor& xv = qkv.value();
  if (heads == 0 || xv.cols() % (3 * heads) != 0 || xv.rows() != batch * seq) {
    throw DimensionError("causal_attention: shape " + shape_str(xv.shape) + " incompatible with batch=" +
                         std::to_string(batch) + " seq=" + std::to_string(seq) +
                         " heads=" + std::to_string(heads));
  }
  const kernels::AttentionDims dims{batch, seq, heads, xv.cols() / (3 * heads)};
  Tensor out(Shape{batch * seq, dims.width()});
  auto lse = std::make_shared<std::vector<double>>(batch * heads * seq);
  kernels::attention_forward(xv.data, out.data, *lse, dims);
  return qkv.tape->record(std::move(out), {qkv.id}, [qkv, lse, dims](Tape& tape, std::size_t self) {
    kernels::attention_backward(tape.value(qkv.id).data, tape.value(self).data, *lse, tape.grad(self),
                                tape.grad_buffer(qkv.id), dims);
  });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  const Tensor& tv = table.value();
  const std::size_t vocab = tv.rows(), cols = tv.cols();
  Tensor out(Shape{indices.size(), cols});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= vocab) {
      throw IndexError("gather_rows: index " + std::to_string(indices[r]) + " out of range for table " +
                       shape_str(tv.shape));
    }
    std::copy_n(tv.data.begin() + static_cast<std::ptrdiff_t>(indices[r] * cols), cols,
                out.data.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  return table.tape->record(std::move(out), {table.id},
                            [table, idx = std::vector<std::size_t>(indices.begin(), indices.end()), cols](
                                Tape& tape, std::size_t self) {
                              const auto g = tape.grad(self);
                              auto& gt = tape.grad_buffer(table.id);
                              for (std::size_t r = 0; r < idx.size(); ++r)
                                for (std::size_t c = 0; c < cols; ++c) gt[idx[r] * cols + c] += g[r * cols + c];
                            });
}

Var pick(Var x, std::span<const std::size_t> indices) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (indices.size() != rows) {
    throw DimensionError("pick: " + std::to_string(indices.size()) + " indices for shape " + shape_str(xv.shape));
  }
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (indices[r] >= cols) throw IndexError("pick: index " + std::to_string(indices[r]) + " >= " + std::to_string(cols));
    out.data[r] = xv.data[r * cols + indices[r]];
  }
  return x.tape->record(std::move(out), {x.id},
                        [x, idx = std::vector<std::size_t>(indices.begin(), indices.end()), cols](
                            Tape& tape, std::size_t self) {
                          const auto g = tape.grad(self);
                          auto& gx = tape.grad_buffer(x.id);
                          for (std::size_t r = 0; r < idx.size(); ++r) gx[r * cols + idx[r]] += g[r];
                        });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets) {
  const Tensor& xv = logits.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for shape " +
                         shape_str(xv.shape));
  }
  auto probs = std::make_shared<std::vector<double>>(rows * cols);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= cols) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[r]) + " >= " + std::to_string(cols));
    }
    const double* xr = xv.data.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(xr[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) (*probs)[r * cols + c] = std::exp(xr[c] - lse);
    total += lse - xr[targets[r]];
  }
  return logits.tape->record(Tensor::scalar(total), {logits.id},
                             [logits, probs, idx = std::vector<std::size_t>(targets.begin(), targets.end()),
                              cols](Tape& tape, std::size_t self) {
                               const double g = tape.grad(self)[0];
                               auto& gx = tape.grad_buffer(logits.id);
                               for (std::size_t i = 0; i < probs->size(); ++i) gx[i] += g * (*probs)[i];
                               for (std::size_t r = 0; r < idx.size(); ++r) gx[r * cols + idx[r]] -= g;
                             });
}

Var squared_error(Var pred, const Tensor& target) {
  const Tensor& pv = pred.value();
  require_same_shape("squared_error", pv, target);
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = pv.data[i] - target.data[i];
    total += d * d;
  }
  return pred.tape->record(Tensor::scalar(total), {pred.id}, [pred, t = target.data](Tape& tape, std::size_t self) {
    const double g = tape.grad(self)[0];
    const auto& p = tape.value(pred.id).data;
    auto& gp = tape.grad_buffer(pred.id);
    for (std::size_t i = 0; i < p.size(); ++i) gp[i] += 2.0 * g * (p[i] - t[i]);
  });
}

}  // namespace pptlab::ad
