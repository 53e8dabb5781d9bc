#pragma once

#include <functional>
#include <span>
#include <vector>

#include "robustaug/tensor.hpp"

namespace robustaug {

// Central-difference estimate of d f / d params, one coordinate at a time.
// Every tensor is restored to its original value before returning.
std::vector<std::vector<double>> finite_difference_gradient(const std::function<double()>& f,
                                                            std::span<Tensor* const> params, double h = 1e-5);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-7);

}  // namespace robustaug
