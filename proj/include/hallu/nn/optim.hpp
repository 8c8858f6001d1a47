#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hallu/nn/tensor.hpp"

namespace hallu::nn {

struct SgdConfig {
  double lr = 0.01;
  double weight_decay = 1e-4;
  double momentum = 0.0;  // plain SGD unless set
};

/// value <- value - lr * (grad + weight_decay * value), then grad <- 0.
/// Only Parameters are touched; batch-norm running statistics are buffers and
/// never reach this function.
template <typename T>
void sgd_step(std::span<Parameter<T>* const> params, double lr, double weight_decay);

/// SGD with optional classical momentum. With momentum 0 it is exactly sgd_step.
template <typename T>
class Sgd {
 public:
  explicit Sgd(SgdConfig config);

  void step(std::span<Parameter<T>* const> params, double lr);
  const SgdConfig& config() const { return config_; }

 private:
  SgdConfig config_;
  std::vector<std::vector<double>> velocity_;
};

/// base_lr * 10^-floor(epoch / step_size)
double lr_schedule(std::size_t epoch, double base_lr, std::size_t step_size);

}  // namespace hallu::nn
