#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace pptlab {

using Rng = std::mt19937_64;

// Independent sub-stream seed for item `index` of a run seeded with `master`.
// `stream` separates unrelated uses of the same index (env means, noise, actions).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::uint64_t stream = 0);

inline Rng make_rng(std::uint64_t master, std::uint64_t index, std::uint64_t stream = 0) {
  return Rng{derive_seed(master, index, stream)};
}

double sample_normal(Rng& rng, double mean, double stddev);
double sample_uniform(Rng& rng, double lo, double hi);

// Symmetric Dirichlet(alpha, ..., alpha) of dimension k.
std::vector<double> sample_dirichlet(Rng& rng, std::size_t k, double alpha);

// Index drawn from a probability vector (need not be exactly normalized).
std::size_t sample_categorical(Rng& rng, std::span<const double> probs);

}  // namespace pptlab
