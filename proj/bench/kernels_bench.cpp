// Parallel kernels against their serial references at training shapes
// (batch 64 x 101 tokens, embed 32, 4 heads). Arg 0 = parallel, 1 = reference.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "pptlab/kernels.hpp"

namespace k = pptlab::kernels;

namespace {

constexpr std::size_t kRows = 64 * 101;
constexpr std::size_t kDim = 32;

std::vector<double> random_vec(std::size_t n, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

// m x k times k x n with the shapes of the qkv projection and the MLP.
void BM_gemm_nn(benchmark::State& s) {
  const std::size_t m = kRows, kk = kDim, n = static_cast<std::size_t>(s.range(1));
  const auto a = random_vec(m * kk, 1), b = random_vec(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : s) {
    if (s.range(0) == 0)
      k::gemm_nn(a, b, c, m, kk, n, false);
    else
      k::ref::gemm_nn(a, b, c, m, kk, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  s.counters["GFLOP/s"] = benchmark::Counter(2.0 * m * kk * n, benchmark::Counter::kIsIterationInvariantRate,
                                             benchmark::Counter::kIs1000);
}

// Weight gradient: A^T B over all rows.
void BM_gemm_tn(benchmark::State& s) {
  const std::size_t kk = kRows, m = kDim, n = static_cast<std::size_t>(s.range(1));
  const auto a = random_vec(kk * m, 3), b = random_vec(kk * n, 4);
  std::vector<double> c(m * n);
  for (auto _ : s) {
    if (s.range(0) == 0)
      k::gemm_tn(a, b, c, m, kk, n, false);
    else
      k::ref::gemm_tn(a, b, c, m, kk, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  s.counters["GFLOP/s"] = benchmark::Counter(2.0 * m * kk * n, benchmark::Counter::kIsIterationInvariantRate,
                                             benchmark::Counter::kIs1000);
}

// Input gradient: dY W^T.
void BM_gemm_nt(benchmark::State& s) {
  const std::size_t m = kRows, n = kDim, kk = static_cast<std::size_t>(s.range(1));
  const auto a = random_vec(m * kk, 5), b = random_vec(n * kk, 6);
  std::vector<double> c(m * n);
  for (auto _ : s) {
    if (s.range(0) == 0)
      k::gemm_nt(a, b, c, m, kk, n, false);
    else
      k::ref::gemm_nt(a, b, c, m, kk, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  s.counters["GFLOP/s"] = benchmark::Counter(2.0 * m * kk * n, benchmark::Counter::kIsIterationInvariantRate,
                                             benchmark::Counter::kIs1000);
}

const k::AttentionDims kAttn{64, 101, 4, 8};

void BM_attention_forward(benchmark::State& s) {
  const auto qkv = random_vec(kAttn.rows() * 3 * kAttn.width(), 7);
  std::vector<double> out(kAttn.rows() * kAttn.width()), lse(kAttn.batch * kAttn.heads * kAttn.seq);
  for (auto _ : s) {
    if (s.range(0) == 0)
      k::attention_forward(qkv, out, lse, kAttn);
    else
      k::ref::attention_forward(qkv, out, lse, kAttn);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_attention_backward(benchmark::State& s) {
  const auto qkv = random_vec(kAttn.rows() * 3 * kAttn.width(), 8);
  const auto dout = random_vec(kAttn.rows() * kAttn.width(), 9);
  std::vector<double> out(kAttn.rows() * kAttn.width()), lse(kAttn.batch * kAttn.heads * kAttn.seq);
  std::vector<double> dqkv(qkv.size());
  k::ref::attention_forward(qkv, out, lse, kAttn);
  for (auto _ : s) {
    if (s.range(0) == 0)
      k::attention_backward(qkv, out, lse, dout, dqkv, kAttn);
    else
      k::ref::attention_backward(qkv, out, lse, dout, dqkv, kAttn);
    benchmark::DoNotOptimize(dqkv.data());
  }
}

void BM_layer_norm(benchmark::State& s) {
  const auto x = random_vec(kRows * kDim, 10), dy = random_vec(kRows * kDim, 11);
  const std::vector<double> gain(kDim, 1.0), bias(kDim, 0.0);
  std::vector<double> y(x.size()), mean(kRows), rstd(kRows), dx(x.size()), dg(kDim), db(kDim);
  for (auto _ : s) {
    if (s.range(0) == 0) {
      k::layer_norm_forward(x, gain, bias, y, mean, rstd, kRows, kDim, 1e-5);
      k::layer_norm_backward(x, gain, mean, rstd, dy, dx, dg, db, kRows, kDim);
    } else {
      k::ref::layer_norm_forward(x, gain, bias, y, mean, rstd, kRows, kDim, 1e-5);
      k::ref::layer_norm_backward(x, gain, mean, rstd, dy, dx, dg, db, kRows, kDim);
    }
    benchmark::DoNotOptimize(dx.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm_nn)->ArgsProduct({{0, 1}, {96, 128}})->ArgNames({"ref", "n"})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_gemm_tn)->ArgsProduct({{0, 1}, {96, 128}})->ArgNames({"ref", "n"})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_gemm_nt)->ArgsProduct({{0, 1}, {96, 128}})->ArgNames({"ref", "k"})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_attention_forward)->Arg(0)->Arg(1)->ArgName("ref")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_attention_backward)->Arg(0)->Arg(1)->ArgName("ref")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_layer_norm)->Arg(0)->Arg(1)->ArgName("ref")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
