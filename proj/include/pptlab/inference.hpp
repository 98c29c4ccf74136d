#pragma once

#include <span>
#include <vector>

#include "pptlab/model.hpp"

namespace pptlab::models {

// Tape-free, one-row-at-a-time evaluation with cached keys/values, for online
// deployment. push(row_t) returns the same head output as row t of forward() on the
// whole prefix.
class IncrementalModel {
 public:
  explicit IncrementalModel(const ModelParams& params);

  void reset();
  std::span<const double> push(std::span<const double> row);
  std::size_t length() const { return length_; }
  const ModelConfig& config() const { return params_->config; }

 private:
  const ModelParams* params_;
  std::size_t length_ = 0;
  std::vector<std::vector<double>> keys_;    // per layer: max_seq_len x d
  std::vector<std::vector<double>> values_;  // per layer: max_seq_len x d
  std::vector<double> h_, a_, qkv_, att_, m_, f_, out_, scores_;
};

// In-place softmax of a logit vector.
void softmax_inplace(std::span<double> v);

}  // namespace pptlab::models
