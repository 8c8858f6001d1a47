#include "hallu/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hallu::nn {

Tensor<double> finite_diff_grad(const std::function<double()>& loss, Tensor<double>& param,
                                double epsilon) {
  Tensor<double> grad(param.shape());
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double saved = param[i];
    param[i] = saved + epsilon;
    const double up = loss();
    param[i] = saved - epsilon;
    const double down = loss();
    param[i] = saved;
    grad[i] = (up - down) / (2.0 * epsilon);
  }
  return grad;
}

double max_relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric, double floor) {
  if (analytic.shape() != numeric.shape()) {
    throw std::invalid_argument("max_relative_error: shape mismatch " + shape_string(analytic.shape()) +
                                " vs " + shape_string(numeric.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double scale = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / scale);
  }
  return worst;
}

}  // namespace hallu::nn
