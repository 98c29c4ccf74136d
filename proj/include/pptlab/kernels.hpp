#pragma once

// Dense numeric kernels behind the autodiff primitives.
//
// Two implementations share every signature: the OpenMP-parallel versions in
// `pptlab::kernels` (used by the library) and straightforward serial versions in
// `pptlab::kernels::ref`, kept as the reference the tests and the benchmark compare
// against. Every parallel kernel assigns each output element to exactly one thread
// and sums in a fixed order, so results do not depend on the thread count.
//
// All matrices are row-major and contiguous.

#include <cstddef>
#include <span>

namespace pptlab::kernels {

// C[m,n] = A[m,k] B[k,n]  (C += ... when accumulate)
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
// C[m,n] = A[m,k] B[n,k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
// C[m,n] = A[k,m]^T B[k,n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);

// Causal multi-head self-attention over a packed projection.
//   qkv: [batch*seq, 3*width] laid out as [q | k | v], width = heads*head_dim
//   out: [batch*seq, width]
//   lse: [batch*heads*seq] row log-sum-exp of the scaled, masked scores
struct AttentionDims {
  std::size_t batch = 1;
  std::size_t seq = 1;
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  std::size_t width() const { return heads * head_dim; }
  std::size_t rows() const { return batch * seq; }
};

void attention_forward(std::span<const double> qkv, std::span<double> out, std::span<double> lse,
                       const AttentionDims& dims);
// Accumulates into dqkv. Scores are recomputed from qkv and lse.
void attention_backward(std::span<const double> qkv, std::span<const double> out,
                        std::span<const double> lse, std::span<const double> dout,
                        std::span<double> dqkv, const AttentionDims& dims);

// y = (x - mean) * rstd * gain + bias, row-wise over `cols`.
void layer_norm_forward(std::span<const double> x, std::span<const double> gain,
                        std::span<const double> bias, std::span<double> y, std::span<double> mean,
                        std::span<double> rstd, std::size_t rows, std::size_t cols, double eps);
// Accumulates into dx, dgain, dbias.
void layer_norm_backward(std::span<const double> x, std::span<const double> gain,
                         std::span<const double> mean, std::span<const double> rstd,
                         std::span<const double> dy, std::span<double> dx, std::span<double> dgain,
                         std::span<double> dbias, std::size_t rows, std::size_t cols);

namespace ref {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate);
void attention_forward(std::span<const double> qkv, std::span<double> out, std::span<double> lse,
                       const AttentionDims& dims);
void attention_backward(std::span<const double> qkv, std::span<const double> out,
                        std::span<const double> lse, std::span<const double> dout,
                        std::span<double> dqkv, const AttentionDims& dims);
void layer_norm_forward(std::span<const double> x, std::span<const double> gain,
                        std::span<const double> bias, std::span<double> y, std::span<double> mean,
                        std::span<double> rstd, std::size_t rows, std::size_t cols, double eps);
void layer_norm_backward(std::span<const double> x, std::span<const double> gain,
                         std::span<const double> mean, std::span<const double> rstd,
                         std::span<const double> dy, std::span<double> dx, std::span<double> dgain,
                         std::span<double> dbias, std::size_t rows, std::size_t cols);

}  // namespace ref

// Threads used by the parallel kernels; 0 leaves the OpenMP default in place.
void set_num_threads(int threads);
int num_threads();

}  // namespace pptlab::kernels
