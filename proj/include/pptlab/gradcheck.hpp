#pragma once

#include <functional>
#include <vector>

#include "pptlab/autodiff.hpp"

namespace pptlab::ad {

// Builds a scalar objective on the given tape, binding each tensor in `params`
// with Tape::parameter.
using Objective = std::function<Var(Tape&, std::vector<Tensor*>&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_fd = 0.0;
  double worst_bp = 0.0;
};

// Central finite differences vs backprop over every coordinate of every parameter.
// Error per coordinate: |g_fd - g_bp| / max(1e-8, |g_fd| + |g_bp|).
// Throws NumericError on non-finite objective values or gradients.
GradCheckResult grad_check(const Objective& f, std::vector<Tensor*> params, double eps);

}  // namespace pptlab::ad
