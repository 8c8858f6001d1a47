#include "hallu/nn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace hallu::nn {

template <typename T>
void sgd_step(std::span<Parameter<T>* const> params, double lr, double weight_decay) {
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be positive");
  for (Parameter<T>* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double v = p->value[i];
      p->value[i] = static_cast<T>(v - lr * (static_cast<double>(p->grad[i]) + weight_decay * v));
    }
    p->zero_grad();
  }
}

template <typename T>
Sgd<T>::Sgd(SgdConfig config) : config_(config) {
  if (config_.momentum < 0.0 || config_.momentum >= 1.0) {
    throw std::invalid_argument("sgd: momentum must lie in [0, 1)");
  }
}

template <typename T>
void Sgd<T>::step(std::span<Parameter<T>* const> params, double lr) {
  if (config_.momentum == 0.0) {
    sgd_step(params, lr, config_.weight_decay);
    return;
  }
  if (!(lr > 0.0)) throw std::invalid_argument("sgd: lr must be positive");
  if (velocity_.size() != params.size()) {
    velocity_.assign(params.size(), {});
    for (std::size_t k = 0; k < params.size(); ++k) velocity_[k].assign(params[k]->value.size(), 0.0);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = *params[k];
    std::vector<double>& vel = velocity_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double v = p.value[i];
      vel[i] = config_.momentum * vel[i] + static_cast<double>(p.grad[i]) + config_.weight_decay * v;
      p.value[i] = static_cast<T>(v - lr * vel[i]);
    }
    p.zero_grad();
  }
}

double lr_schedule(std::size_t epoch, double base_lr, std::size_t step_size) {
  if (step_size == 0) return base_lr;
  return base_lr * std::pow(10.0, -static_cast<double>(epoch / step_size));
}

template void sgd_step(std::span<Parameter<float>* const>, double, double);
template void sgd_step(std::span<Parameter<double>* const>, double, double);
template class Sgd<float>;
template class Sgd<double>;

}  // namespace hallu::nn
