#pragma once

#include <string>
#include <vector>

namespace pptlab {

struct CheckOutcome {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed() const { return value < threshold; }
};

// Central-difference checks of every autodiff primitive (threshold 1e-6) and of the
// full training objectives on a dim-8, 2-layer, K=3, n=4 model (threshold 1e-4).
std::vector<CheckOutcome> primitive_gradient_checks();
std::vector<CheckOutcome> objective_gradient_checks();

}  // namespace pptlab
