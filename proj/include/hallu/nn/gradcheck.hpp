#pragma once

#include <functional>

#include "hallu/nn/tensor.hpp"

namespace hallu::nn {

/// Central differences (f(θ+ε) − f(θ−ε)) / 2ε for every coordinate of
/// `param.value`. `loss` must read the parameter in place; it is restored
/// bit-exactly afterwards.
Tensor<double> finite_diff_grad(const std::function<double()>& loss, Tensor<double>& param,
                                double epsilon = 1e-6);

/// max_i |a_i − n_i| / max(|a_i|, |n_i|, floor). The floor keeps coordinates
/// whose true gradient is ~0 from turning round-off into huge ratios.
double max_relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric,
                          double floor = 1e-5);

}  // namespace hallu::nn
