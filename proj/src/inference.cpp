#include "pptlab/inference.hpp"

#include <algorithm>
#include <cmath>

#include "pptlab/errors.hpp"

namespace pptlab::models {

namespace {

// y = x W + b for a single row; W is in x out.
void row_linear(std::span<const double> x, const Tensor& w, std::span<double> y) {
  const std::size_t in = w.shape[0], out = w.shape[1];
  std::fill_n(y.begin(), out, 0.0);
  for (std::size_t i = 0; i < in; ++i) {
    const double xi = x[i];
    const double* wi = w.data.data() + i * out;
    for (std::size_t j = 0; j < out; ++j) y[j] += xi * wi[j];
  }
}

void row_linear(std::span<const double> x, const Tensor& w, const Tensor& b, std::span<double> y) {
  row_linear(x, w, y);
  for (std::size_t j = 0; j < b.size(); ++j) y[j] += b.data[j];
}

void row_layer_norm(std::span<const double> x, const Tensor& gain, const Tensor& bias, std::span<double> y) {
  const std::size_t n = x.size();
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(n);
  const double rs = 1.0 / std::sqrt(var + 1e-5);
  for (std::size_t c = 0; c < n; ++c) y[c] = (x[c] - mu) * rs * gain.data[c] + bias.data[c];
}

double gelu(double x) {
  constexpr double c = 0.7978845608028654, a = 0.044715;
  return 0.5 * x * (1.0 + std::tanh(c * (x + a * x * x * x)));
}

}  // namespace

void softmax_inplace(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (auto& x : v) total += (x = std::exp(x - mx));
  for (auto& x : v) x /= total;
}

IncrementalModel::IncrementalModel(const ModelParams& params) : params_(&params) {
  const auto& cfg = params.config;
  const std::size_t d = cfg.embed_dim;
  keys_.assign(cfg.num_layers, std::vector<double>(cfg.max_seq_len * d));
  values_.assign(cfg.num_layers, std::vector<double>(cfg.max_seq_len * d));
  h_.resize(d);
  a_.resize(d);
  qkv_.resize(3 * d);
  att_.resize(d);
  m_.resize(d);
  f_.resize(cfg.mlp_dim());
  out_.resize(cfg.num_arms);
  scores_.resize(cfg.max_seq_len);
}

void IncrementalModel::reset() { length_ = 0; }

std::span<const double> IncrementalModel::push(std::span<const double> row) {
  const ModelParams& p = *params_;
  const ModelConfig& cfg = p.config;
  if (row.size() != cfg.feature_dim()) {
    throw EncodingError("token width " + std::to_string(row.size()) + " != model feature_dim " +
                        std::to_string(cfg.feature_dim()));
  }
  if (length_ >= cfg.max_seq_len) {
    throw EncodingError("sequence would exceed max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  const std::size_t d = cfg.embed_dim, heads = cfg.num_heads, hd = d / heads, t = length_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  row_linear(row, p.input_weight, p.input_bias, h_);
  for (std::size_t c = 0; c < d; ++c) h_[c] += p.positions.data[t * d + c];

  for (std::size_t li = 0; li < cfg.num_layers; ++li) {
    const LayerParams& l = p.layers[li];
    row_layer_norm(h_, l.ln1_gain, l.ln1_bias, a_);
    row_linear(a_, l.qkv_weight, qkv_);
    for (std::size_t c = 0; c < d; ++c) {
      qkv_[c] += l.q_bias.data[c];
      qkv_[2 * d + c] += l.v_bias.data[c];
    }
    auto& keys = keys_[li];
    auto& vals = values_[li];
    std::copy_n(qkv_.begin() + static_cast<std::ptrdiff_t>(d), d, keys.begin() + static_cast<std::ptrdiff_t>(t * d));
    std::copy_n(qkv_.begin() + static_cast<std::ptrdiff_t>(2 * d), d, vals.begin() + static_cast<std::ptrdiff_t>(t * d));
    for (std::size_t h = 0; h < heads; ++h) {
      const double* q = qkv_.data() + h * hd;
      double mx = -INFINITY;
      for (std::size_t u = 0; u <= t; ++u) {
        const double* k = keys.data() + u * d + h * hd;
        double s = 0.0;
        for (std::size_t i = 0; i < hd; ++i) s += q[i] * k[i];
        scores_[u] = s * scale;
        mx = std::max(mx, scores_[u]);
      }
      double total = 0.0;
      for (std::size_t u = 0; u <= t; ++u) total += (scores_[u] = std::exp(scores_[u] - mx));
      double* o = att_.data() + h * hd;
      std::fill(o, o + hd, 0.0);
      for (std::size_t u = 0; u <= t; ++u) {
        const double w = scores_[u] / total;
        const double* v = vals.data() + u * d + h * hd;
        for (std::size_t i = 0; i < hd; ++i) o[i] += w * v[i];
      }
    }
    row_linear(att_, l.proj_weight, l.proj_bias, a_);
    for (std::size_t c = 0; c < d; ++c) h_[c] += a_[c];
    row_layer_norm(h_, l.ln2_gain, l.ln2_bias, m_);
    row_linear(m_, l.fc_weight, l.fc_bias, f_);
    for (auto& v : f_) v = gelu(v);
    row_linear(f_, l.out_weight, l.out_bias, a_);
    for (std::size_t c = 0; c < d; ++c) h_[c] += a_[c];
  }
  row_layer_norm(h_, p.final_gain, p.final_bias, m_);
  row_linear(m_, p.head_weight, p.head_bias, out_);
  ++length_;
  for (double v : out_) {
    if (!std::isfinite(v)) throw NumericError("incremental forward produced non-finite values");
  }
  return out_;
}

}  // namespace pptlab::models
