#include <omp.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "pptlab/kernels.hpp"

namespace pptlab::kernels {

namespace {

using Index = std::ptrdiff_t;

// Static contiguous partition of [0, n) for the calling thread.
std::pair<std::size_t, std::size_t> thread_range(std::size_t n) {
  const auto nt = static_cast<std::size_t>(omp_get_num_threads());
  const auto id = static_cast<std::size_t>(omp_get_thread_num());
  const std::size_t chunk = (n + nt - 1) / nt;
  const std::size_t lo = std::min(n, id * chunk);
  return {lo, std::min(n, lo + chunk)};
}

// Register tile: an MR x NR block of C accumulated over p in [0, k) in order.
// a(r, p) = a[r * a_rs + p * a_ps], b(p, j) = b[p * n + j].
constexpr std::size_t MR = 4;
constexpr std::size_t NR = 8;

inline void tile_full(const double* __restrict a, std::size_t a_rs, std::size_t a_ps, const double* __restrict b,
                      std::size_t ldb, double* __restrict c, std::size_t ldc, std::size_t k) {
  double acc[MR][NR] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const double* bp = b + p * ldb;
    for (std::size_t r = 0; r < MR; ++r) {
      const double ar = a[r * a_rs + p * a_ps];
#pragma omp simd
      for (std::size_t j = 0; j < NR; ++j) acc[r][j] += ar * bp[j];
    }
  }
  for (std::size_t r = 0; r < MR; ++r)
    for (std::size_t j = 0; j < NR; ++j) c[r * ldc + j] += acc[r][j];
}

inline void tile_edge(const double* a, std::size_t a_rs, std::size_t a_ps, const double* b, std::size_t ldb, double* c,
                      std::size_t ldc, std::size_t k, std::size_t mr, std::size_t nr) {
  double acc[MR][NR] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const double* bp = b + p * ldb;
    for (std::size_t r = 0; r < mr; ++r) {
      const double ar = a[r * a_rs + p * a_ps];
      for (std::size_t j = 0; j < nr; ++j) acc[r][j] += ar * bp[j];
    }
  }
  for (std::size_t r = 0; r < mr; ++r)
    for (std::size_t j = 0; j < nr; ++j) c[r * ldc + j] += acc[r][j];
}

// C rows [i0, i1) += sum over p in [p0, p1) of a(i, p) b(p, :)
void tile_rows(const double* a, std::size_t a_rs, std::size_t a_ps, const double* b, double* c, std::size_t n,
               std::size_t i0, std::size_t i1, std::size_t p0, std::size_t p1) {
  const double* ap = a + p0 * a_ps;
  const double* bp = b + p0 * n;
  const std::size_t k = p1 - p0;
  for (std::size_t i = i0; i < i1; i += MR) {
    const std::size_t mr = std::min(MR, i1 - i);
    for (std::size_t j = 0; j < n; j += NR) {
      const std::size_t nr = std::min(NR, n - j);
      if (mr == MR && nr == NR) {
        tile_full(ap + i * a_rs, a_rs, a_ps, bp + j, n, c + i * n + j, n, k);
      } else {
        tile_edge(ap + i * a_rs, a_rs, a_ps, bp + j, n, c + i * n + j, n, k, mr, nr);
      }
    }
  }
}

}  // namespace

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const Index blocks = static_cast<Index>((m + MR - 1) / MR);
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
  for (Index blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * MR, i1 = std::min(m, i0 + MR);
    if (!accumulate) std::fill(c.data() + i0 * n, c.data() + i1 * n, 0.0);
    tile_rows(a.data(), k, 1, b.data(), c.data(), n, i0, i1, 0, k);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  // B is small in every call site (a weight matrix); transposing it lets the
  // inner loop run over contiguous output columns.
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt, c, m, k, n, accumulate);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  // k is the long (token) dimension here; walk it in cache-sized chunks.
  constexpr std::size_t kChunk = 256;
#pragma omp parallel if (m * k * n > 32768)
  {
    const auto [lo_blk, hi_blk] = thread_range((m + MR - 1) / MR);
    const std::size_t lo = std::min(m, lo_blk * MR), hi = std::min(m, hi_blk * MR);
    if (!accumulate) std::fill(c.data() + lo * n, c.data() + hi * n, 0.0);
    for (std::size_t p0 = 0; p0 < k; p0 += kChunk) {
      tile_rows(a.data(), 1, m, b.data(), c.data(), n, lo, hi, p0, std::min(k, p0 + kChunk));
    }
  }
}

namespace {

// One (batch, head) slice copied out of the packed projection: row-major K and V
// plus transposed copies so score rows vectorize over key positions.
struct HeadSlice {
  std::size_t seq, hd;
  std::vector<double> q, k, v, kt, vt;

  HeadSlice(std::size_t s, std::size_t d) : seq(s), hd(d), q(s * d), k(s * d), v(s * d), kt(s * d), vt(s * d) {}

  void load(const double* base, std::size_t stride, std::size_t width) {
    for (std::size_t u = 0; u < seq; ++u) {
      const double* row = base + u * stride;
      for (std::size_t i = 0; i < hd; ++i) {
        q[u * hd + i] = row[i];
        k[u * hd + i] = kt[i * seq + u] = row[width + i];
        v[u * hd + i] = vt[i * seq + u] = row[2 * width + i];
      }
    }
  }

  // scores[u] = scale * <q_t, k_u> for u <= t
  void scores(std::size_t t, double scale, double* out) const {
    std::fill(out, out + t + 1, 0.0);
    const double* qt = q.data() + t * hd;
    for (std::size_t i = 0; i < hd; ++i) {
      const double qi = qt[i];
      const double* kti = kt.data() + i * seq;
#pragma omp simd
      for (std::size_t u = 0; u <= t; ++u) out[u] += qi * kti[u];
    }
#pragma omp simd
    for (std::size_t u = 0; u <= t; ++u) out[u] *= scale;
  }
};

// exp for a contiguous block, written branch-free so the loop vectorizes.
// Cody-Waite reduction to |r| <= ln2/2 and a degree-13 Taylor polynomial;
// agrees with std::exp to a few ulp, underflows to 0 below -708.
void exp_block(double* x, std::size_t n) {
  constexpr double kLog2e = 1.4426950408889634;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  constexpr double kShift = 6755399441055744.0;  // 1.5 * 2^52
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[i];
    const double v = xi > -708.0 ? xi : -708.0;
    double kd = v * kLog2e + kShift;
    const auto bits = std::bit_cast<std::uint64_t>(kd);
    kd -= kShift;
    const double r = (v - kd * kLn2Hi) - kd * kLn2Lo;
    double p = 1.0 / 6227020800.0;
    p = p * r + 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    const double scale = std::bit_cast<double>((bits + 1023) << 52);
    x[i] = xi < -708.0 ? 0.0 : p * scale;
  }
}

}  // namespace

void attention_forward(std::span<const double> qkv, std::span<double> out, std::span<double> lse,
                       const AttentionDims& dims) {
  const std::size_t seq = dims.seq, hd = dims.head_dim, width = dims.width();
  const std::size_t stride = 3 * width;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Index units = static_cast<Index>(dims.batch * dims.heads);
#pragma omp parallel if (units > 1)
  {
    HeadSlice slice(seq, hd);
    std::vector<double> scores(seq);
    std::vector<double> acc(hd);
#pragma omp for schedule(static)
    for (Index unit = 0; unit < units; ++unit) {
      const std::size_t b = static_cast<std::size_t>(unit) / dims.heads;
      const std::size_t h = static_cast<std::size_t>(unit) % dims.heads;
      slice.load(qkv.data() + b * seq * stride + h * hd, stride, width);
      for (std::size_t t = 0; t < seq; ++t) {
        slice.scores(t, scale, scores.data());
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t u = 0; u <= t; ++u) mx = std::max(mx, scores[u]);
        for (std::size_t u = 0; u <= t; ++u) scores[u] -= mx;
        exp_block(scores.data(), t + 1);
        double total = 0.0;
        for (std::size_t u = 0; u <= t; ++u) total += scores[u];
        const double inv = 1.0 / total;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t u = 0; u <= t; ++u) {
          const double w = scores[u] * inv;
          const double* val = slice.v.data() + u * hd;
#pragma omp simd
          for (std::size_t i = 0; i < hd; ++i) acc[i] += w * val[i];
        }
        std::copy(acc.begin(), acc.end(), out.data() + (b * seq + t) * width + h * hd);
        lse[(b * dims.heads + h) * seq + t] = mx + std::log(total);
      }
    }
  }
}

void attention_backward(std::span<const double> qkv, std::span<const double> out,
                        std::span<const double> lse, std::span<const double> dout,
                        std::span<double> dqkv, const AttentionDims& dims) {
  const std::size_t seq = dims.seq, hd = dims.head_dim, width = dims.width();
  const std::size_t stride = 3 * width;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Index units = static_cast<Index>(dims.batch * dims.heads);
#pragma omp parallel if (units > 1)
  {
    HeadSlice slice(seq, hd);
    std::vector<double> p(seq), dp(seq), dkt(seq * hd), dvt(seq * hd), dq(hd);
#pragma omp for schedule(static)
    for (Index unit = 0; unit < units; ++unit) {
      const std::size_t b = static_cast<std::size_t>(unit) / dims.heads;
      const std::size_t h = static_cast<std::size_t>(unit) % dims.heads;
      slice.load(qkv.data() + b * seq * stride + h * hd, stride, width);
      std::fill(dkt.begin(), dkt.end(), 0.0);
      std::fill(dvt.begin(), dvt.end(), 0.0);
      double* dbase = dqkv.data() + b * seq * stride + h * hd;
      for (std::size_t t = 0; t < seq; ++t) {
        const double* go = dout.data() + (b * seq + t) * width + h * hd;
        const double* o = out.data() + (b * seq + t) * width + h * hd;
        const double row_lse = lse[(b * dims.heads + h) * seq + t];
        double delta = 0.0;
        for (std::size_t i = 0; i < hd; ++i) delta += go[i] * o[i];

        slice.scores(t, scale, p.data());
        for (std::size_t u = 0; u <= t; ++u) p[u] -= row_lse;
        exp_block(p.data(), t + 1);
        std::fill(dp.begin(), dp.begin() + static_cast<Index>(t + 1), 0.0);
        for (std::size_t i = 0; i < hd; ++i) {
          const double gi = go[i];
          const double* vti = slice.vt.data() + i * seq;
          double* dvti = dvt.data() + i * seq;
#pragma omp simd
          for (std::size_t u = 0; u <= t; ++u) {
            dp[u] += gi * vti[u];
            dvti[u] += p[u] * gi;
          }
        }
        // dp becomes dS (scaled)
#pragma omp simd
        for (std::size_t u = 0; u <= t; ++u) dp[u] = p[u] * (dp[u] - delta) * scale;
        std::fill(dq.begin(), dq.end(), 0.0);
        for (std::size_t u = 0; u <= t; ++u) {
          const double ds = dp[u];
          const double* ku = slice.k.data() + u * hd;
#pragma omp simd
          for (std::size_t i = 0; i < hd; ++i) dq[i] += ds * ku[i];
        }
        const double* qt = slice.q.data() + t * hd;
        for (std::size_t i = 0; i < hd; ++i) {
          const double qi = qt[i];
          double* dkti = dkt.data() + i * seq;
#pragma omp simd
          for (std::size_t u = 0; u <= t; ++u) dkti[u] += dp[u] * qi;
        }
        double* dqrow = dbase + t * stride;
        for (std::size_t i = 0; i < hd; ++i) dqrow[i] += dq[i];
      }
      for (std::size_t u = 0; u < seq; ++u) {
        double* row = dbase + u * stride;
        for (std::size_t i = 0; i < hd; ++i) {
          row[width + i] += dkt[i * seq + u];
          row[2 * width + i] += dvt[i * seq + u];
        }
      }
    }
  }
}

void layer_norm_forward(std::span<const double> x, std::span<const double> gain,
                        std::span<const double> bias, std::span<double> y, std::span<double> mean,
                        std::span<double> rstd, std::size_t rows, std::size_t cols, double eps) {
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) yr[c] = (xr[c] - mu) * rs * gain[c] + bias[c];
    mean[r] = mu;
    rstd[r] = rs;
  }
}

void layer_norm_backward(std::span<const double> x, std::span<const double> gain,
                         std::span<const double> mean, std::span<const double> rstd,
                         std::span<const double> dy, std::span<double> dx, std::span<double> dgain,
                         std::span<double> dbias, std::size_t rows, std::size_t cols) {
  const double inv_cols = 1.0 / static_cast<double>(cols);
#pragma omp parallel for schedule(static) if (rows * cols > 16384)
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    const double* xr = x.data() + r * cols;
    const double* gr = dy.data() + r * cols;
    double* dxr = dx.data() + r * cols;
    const double mu = mean[r], rs = rstd[r];
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double g = gr[c] * gain[c];
      const double xhat = (xr[c] - mu) * rs;
      sum_g += g;
      sum_gx += g * xhat;
    }
    sum_g *= inv_cols;
    sum_gx *= inv_cols;
    for (std::size_t c = 0; c < cols; ++c) {
      const double xhat = (xr[c] - mu) * rs;
      dxr[c] += rs * (gr[c] * gain[c] - sum_g - xhat * sum_gx);
    }
  }
  // Parameter gradients reduce over rows; kept serial so the summation order is fixed.
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    const double* gr = dy.data() + r * cols;
    const double mu = mean[r], rs = rstd[r];
    for (std::size_t c = 0; c < cols; ++c) {
      dgain[c] += gr[c] * (xr[c] - mu) * rs;
      dbias[c] += gr[c];
    }
  }
}

void set_num_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

int num_threads() { return omp_get_max_threads(); }

}  // namespace pptlab::kernels
