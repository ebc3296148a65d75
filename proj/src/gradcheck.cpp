#include "alood/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "alood/error.hpp"

namespace alood {

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& x, double h) {
  if (!(h > 0.0)) throw NumericError("finite difference step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(const Tensor& actual, const Tensor& expected) {
  if (!actual.same_shape(expected)) {
    throw DimensionError("relative_error: shapes " + shape_to_string(actual.shape()) +
                         " and " + shape_to_string(expected.shape()));
  }
  double scale = 1.0, worst = 0.0;
  for (double v : expected.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < actual.size(); ++i) {
    worst = std::max(worst, std::abs(actual[i] - expected[i]));
  }
  return worst / scale;
}

}  // namespace alood
