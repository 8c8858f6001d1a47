#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hallu/nn/tensor.hpp"

namespace hallu::nn {

// Stateless kernels. Shapes are NCHW; all convolutions are 3x3, stride 1,
// zero padding 1.

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight,
                               const Tensor<T>& grad_out);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input);

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

inline constexpr std::size_t kPoolWindow = 4;

/// Non-overlapping 4x4 max pooling; remainder rows/cols are dropped.
/// `argmax` (optional) receives the flat input index chosen for each output,
/// first occurrence in row-major order on ties.
template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& input, std::vector<std::size_t>* argmax = nullptr);

template <typename T>
Tensor<T> maxpool_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                           const Tensor<T>& grad_out);

// Layers with cached activations for reverse mode. forward() records what
// backward() needs; infer() is const and leaves no trace, so a frozen layer
// can serve concurrent callers.

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& prefix, std::size_t in_channels, std::size_t out_channels);

  Tensor<T> forward(const Tensor<T>& input);
  Tensor<T> backward(const Tensor<T>& grad_out);
  Tensor<T> infer(const Tensor<T>& input) const;

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d {
 public:
  static constexpr double kDefaultEps = 1e-5;
  static constexpr double kDefaultMomentum = 0.1;

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& prefix, std::size_t channels);

  Tensor<T> forward(const Tensor<T>& input, Mode mode);
  Tensor<T> backward(const Tensor<T>& grad_out);
  Tensor<T> infer(const Tensor<T>& input) const;

  std::size_t channels() const { return gamma.value.size(); }

  Parameter<T> gamma;
  Parameter<T> beta;
  // Running statistics are buffers, not parameters: no gradient, no decay.
  Tensor<T> running_mean;
  Tensor<T> running_var;
  std::string running_mean_id;
  std::string running_var_id;
  double momentum = kDefaultMomentum;
  double eps = kDefaultEps;

 private:
  Mode mode_ = Mode::kTrain;
  Tensor<T> normalized_;
  std::vector<double> inv_std_;
};

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& input);
  Tensor<T> backward(const Tensor<T>& grad_out) const;

 private:
  Tensor<T> input_;
};

template <typename T>
class MaxPool4 {
 public:
  Tensor<T> forward(const Tensor<T>& input);
  Tensor<T> backward(const Tensor<T>& grad_out) const;

 private:
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

}  // namespace hallu::nn
