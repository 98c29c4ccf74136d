#include "pptlab/optim.hpp"

#include <cmath>
#include <string>

#include "pptlab/errors.hpp"

namespace pptlab {

AdamW::AdamW(AdamWConfig config) : config_(config) {}

void AdamW::step(std::span<Tensor* const> params) {
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  if (m_.size() != params.size()) {
    throw DimensionError("AdamW: expected " + std::to_string(m_.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = *params[i];
    if (p.size() != m_[i].size() || (p.has_grad() && p.grad.size() != p.size())) {
      throw DimensionError("AdamW: parameter " + std::to_string(i) + " changed shape to " + shape_str(p.shape));
    }
    for (double g : p.grad) {
      if (!std::isfinite(g)) throw NumericError("AdamW: non-finite gradient in parameter " + std::to_string(i));
    }
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  const double decay = 1.0 - config_.learning_rate * config_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = p.has_grad() ? p.grad[j] : 0.0;
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p.data[j] *= decay;
      p.data[j] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

}  // namespace pptlab
