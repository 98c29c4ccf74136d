// Serial reference kernels. Written for clarity, not speed: the attention pair
// materializes the full masked score matrix and differentiates the softmax through
// its explicit Jacobian, an independent route from the recompute-based parallel code.

#include <cmath>
#include <limits>
#include <vector>

#include "pptlab/kernels.hpp"

namespace pptlab::kernels::ref {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = s;
    }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = s;
    }
}

namespace {

struct HeadView {
  std::span<const double> qkv;
  const AttentionDims& dims;
  std::size_t b, h;
  double q(std::size_t t, std::size_t i) const { return at(t, 0, i); }
  double k(std::size_t t, std::size_t i) const { return at(t, 1, i); }
  double v(std::size_t t, std::size_t i) const { return at(t, 2, i); }
  double at(std::size_t t, std::size_t part, std::size_t i) const {
    return qkv[(b * dims.seq + t) * 3 * dims.width() + part * dims.width() + h * dims.head_dim + i];
  }
};

// Full seq x seq probability matrix of one head, zero above the diagonal.
std::vector<double> head_probs(const HeadView& view) {
  const std::size_t seq = view.dims.seq;
  const double scale = 1.0 / std::sqrt(static_cast<double>(view.dims.head_dim));
  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> probs(seq * seq);
  for (std::size_t t = 0; t < seq; ++t) {
    std::vector<double> row(seq, neg_inf);
    double mx = neg_inf;
    for (std::size_t u = 0; u <= t; ++u) {
      double s = 0.0;
      for (std::size_t i = 0; i < view.dims.head_dim; ++i) s += view.q(t, i) * view.k(u, i);
      row[u] = s * scale;
      mx = std::max(mx, row[u]);
    }
    double total = 0.0;
    for (std::size_t u = 0; u < seq; ++u) total += std::exp(row[u] - mx);
    for (std::size_t u = 0; u < seq; ++u) probs[t * seq + u] = std::exp(row[u] - mx) / total;
  }
  return probs;
}

}  // namespace

void attention_forward(std::span<const double> qkv, std::span<double> out, std::span<double> lse,
                       const AttentionDims& dims) {
  const std::size_t seq = dims.seq, hd = dims.head_dim, width = dims.width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t b = 0; b < dims.batch; ++b)
    for (std::size_t h = 0; h < dims.heads; ++h) {
      HeadView view{qkv, dims, b, h};
      const auto probs = head_probs(view);
      for (std::size_t t = 0; t < seq; ++t) {
        for (std::size_t i = 0; i < hd; ++i) {
          double s = 0.0;
          for (std::size_t u = 0; u < seq; ++u) s += probs[t * seq + u] * view.v(u, i);
          out[(b * seq + t) * width + h * hd + i] = s;
        }
        // log-sum-exp recovered from the unnormalized diagonal-free form
        double mx = -std::numeric_limits<double>::infinity();
        std::vector<double> sc(t + 1);
        for (std::size_t u = 0; u <= t; ++u) {
          double s = 0.0;
          for (std::size_t i = 0; i < hd; ++i) s += view.q(t, i) * view.k(u, i);
          sc[u] = s * scale;
          mx = std::max(mx, sc[u]);
        }
        double total = 0.0;
        for (double s : sc) total += std::exp(s - mx);
        lse[(b * dims.heads + h) * seq + t] = mx + std::log(total);
      }
    }
}

void attention_backward(std::span<const double> qkv, std::span<const double> /*out*/,
                        std::span<const double> /*lse*/, std::span<const double> dout,
                        std::span<double> dqkv, const AttentionDims& dims) {
  const std::size_t seq = dims.seq, hd = dims.head_dim, width = dims.width();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  auto didx = [&](std::size_t b, std::size_t t, std::size_t part, std::size_t h, std::size_t i) {
    return (b * seq + t) * 3 * width + part * width + h * hd + i;
  };
  for (std::size_t b = 0; b < dims.batch; ++b)
    for (std::size_t h = 0; h < dims.heads; ++h) {
      HeadView view{qkv, dims, b, h};
      const auto probs = head_probs(view);
      auto go = [&](std::size_t t, std::size_t i) { return dout[(b * seq + t) * width + h * hd + i]; };
      // dP = dO V^T ; dV = P^T dO
      std::vector<double> dprobs(seq * seq, 0.0);
      for (std::size_t t = 0; t < seq; ++t)
        for (std::size_t u = 0; u < seq; ++u) {
          double s = 0.0;
          for (std::size_t i = 0; i < hd; ++i) s += go(t, i) * view.v(u, i);
          dprobs[t * seq + u] = s;
        }
      for (std::size_t u = 0; u < seq; ++u)
        for (std::size_t i = 0; i < hd; ++i) {
          double s = 0.0;
          for (std::size_t t = 0; t < seq; ++t) s += probs[t * seq + u] * go(t, i);
          dqkv[didx(b, u, 2, h, i)] += s;
        }
      // Softmax Jacobian per row: dS_tu = sum_w P_tw (delta_uw - P_tu) dP_tw
      std::vector<double> dscores(seq * seq, 0.0);
      for (std::size_t t = 0; t < seq; ++t)
        for (std::size_t u = 0; u < seq; ++u) {
          double s = 0.0;
          for (std::size_t w = 0; w < seq; ++w) {
            const double jac = probs[t * seq + u] * ((u == w ? 1.0 : 0.0) - probs[t * seq + w]);
            s += jac * dprobs[t * seq + w];
          }
          dscores[t * seq + u] = s * scale;
        }
      for (std::size_t t = 0; t < seq; ++t)
        for (std::size_t i = 0; i < hd; ++i) {
          double dq = 0.0, dk = 0.0;
          for (std::size_t u = 0; u < seq; ++u) {
            dq += dscores[t * seq + u] * view.k(u, i);
            dk += dscores[u * seq + t] * view.q(u, i);
          }
          dqkv[didx(b, t, 0, h, i)] += dq;
          dqkv[didx(b, t, 1, h, i)] += dk;
        }
    }
}

void layer_norm_forward(std::span<const double> x, std::span<const double> gain,
                        std::span<const double> bias, std::span<double> y, std::span<double> mean,
                        std::span<double> rstd, std::size_t rows, std::size_t cols, double eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += x[r * cols + c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += std::pow(x[r * cols + c] - mu, 2);
    var /= static_cast<double>(cols);
    mean[r] = mu;
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c)
      y[r * cols + c] = (x[r * cols + c] - mu) * rstd[r] * gain[c] + bias[c];
  }
}

void layer_norm_backward(std::span<const double> x, std::span<const double> gain,
                         std::span<const double> mean, std::span<const double> rstd,
                         std::span<const double> dy, std::span<double> dx, std::span<double> dgain,
                         std::span<double> dbias, std::size_t rows, std::size_t cols) {
  const double n = static_cast<double>(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double mu = mean[r], rs = rstd[r];
    const double var_eps = 1.0 / (rs * rs);
    // Chain rule through var and mean explicitly.
    double dvar = 0.0, dmean = 0.0, centered_sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double dxhat = dy[r * cols + c] * gain[c];
      dvar += dxhat * (x[r * cols + c] - mu) * -0.5 * std::pow(var_eps, -1.5);
      dmean += -dxhat * rs;
      centered_sum += x[r * cols + c] - mu;
    }
    dmean += dvar * -2.0 * centered_sum / n;
    for (std::size_t c = 0; c < cols; ++c) {
      const double dxhat = dy[r * cols + c] * gain[c];
      dx[r * cols + c] += dxhat * rs + dvar * 2.0 * (x[r * cols + c] - mu) / n + dmean / n;
      dgain[c] += dy[r * cols + c] * (x[r * cols + c] - mu) * rs;
      dbias[c] += dy[r * cols + c];
    }
  }
}

}  // namespace pptlab::kernels::ref
