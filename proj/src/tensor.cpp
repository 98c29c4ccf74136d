#include "pptlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "pptlab/errors.hpp"

namespace pptlab {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
}

std::size_t Tensor::rows() const {
  if (shape.empty()) return 1;
  return std::accumulate(shape.begin(), shape.end() - 1, std::size_t{1}, std::multiplies<>());
}

void Tensor::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace pptlab
