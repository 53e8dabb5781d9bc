#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace robustaug {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major float64 array. `grad` is allocated iff requires_grad.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor from(std::initializer_list<double> values);

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return data.size() == 1; }

  double item() const;

  std::span<double> values() { return data; }
  std::span<const double> values() const { return data; }

  void set_requires_grad(bool on);
  void zero_grad();

  bool all_finite() const;
};

bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace robustaug
