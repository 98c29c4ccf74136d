#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pptlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float64 array with an optional gradient buffer of the same shape.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when no gradient is attached

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  std::size_t size() const { return data.size(); }
  // Product of all leading dimensions; a 1-D tensor is one row.
  std::size_t rows() const;
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad();
  void zero_grad();

  std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
  }
};

}  // namespace pptlab
