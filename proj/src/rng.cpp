#include "pptlab/rng.hpp"

#include <stdexcept>

namespace pptlab {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::uint64_t stream) {
  return splitmix64(splitmix64(splitmix64(master) ^ index) ^ (stream * 0xd1b54a32d192ed03ULL));
}

double sample_normal(Rng& rng, double mean, double stddev) {
  if (stddev == 0.0) return mean;
  std::normal_distribution<double> dist(mean, stddev);
  return dist(rng);
}

double sample_uniform(Rng& rng, double lo, double hi) {
  if (lo == hi) return lo;
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(rng);
}

std::vector<double> sample_dirichlet(Rng& rng, std::size_t k, double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> out(k);
  double total = 0.0;
  for (auto& v : out) {
    v = gamma(rng);
    total += v;
  }
  if (total <= 0.0) {
    // Every gamma draw underflowed (tiny alpha); fall back to a vertex.
    std::fill(out.begin(), out.end(), 0.0);
    out[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)] = 1.0;
    return out;
  }
  for (auto& v : out) v /= total;
  return out;
}

std::size_t sample_categorical(Rng& rng, std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("sample_categorical: empty distribution");
  std::discrete_distribution<std::size_t> dist(probs.begin(), probs.end());
  return dist(rng);
}

}  // namespace pptlab
