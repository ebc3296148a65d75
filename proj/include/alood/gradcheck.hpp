#pragma once

#include <functional>

#include "alood/tensor.hpp"

namespace alood {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every
/// coordinate of x. Used as the reference for analytic gradients.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double h = 1e-5);

/// max_i |a_i - b_i| / max(1, max_i |b_i|). Shapes must match.
double relative_error(const Tensor& actual, const Tensor& expected);

}  // namespace alood
