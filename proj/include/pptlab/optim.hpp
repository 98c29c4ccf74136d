#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pptlab/tensor.hpp"

namespace pptlab {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// AdamW with decoupled weight decay: w <- w (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {});

  // Reads each tensor's grad; leaves grads untouched. Throws NumericError (and changes
  // nothing) if any gradient is non-finite or if the parameter list changed shape.
  void step(std::span<Tensor* const> params);

  const AdamWConfig& config() const { return config_; }
  std::uint64_t steps() const { return step_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  AdamWConfig config_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace pptlab
