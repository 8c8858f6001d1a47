#include "hallu/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hallu::nn {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

void require_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) {
    throw std::invalid_argument(std::string(what) + ": expected NCHW input, got " + shape_string(s));
  }
}

void check_conv_shapes(const Shape& in, const Shape& w) {
  require_rank4(in, "conv2d");
  if (w.size() != 4 || w[2] != 3 || w[3] != 3) {
    throw std::invalid_argument("conv2d: weight must be [C_out,C_in,3,3], got " + shape_string(w));
  }
  if (w[1] != in[1]) {
    throw std::invalid_argument("conv2d: channel axis mismatch, input C=" + std::to_string(in[1]) +
                                " but weight C_in=" + std::to_string(w[1]));
  }
}

// Valid output x-range for kernel column kx under zero padding 1.
inline std::size_t x_begin(std::size_t kx) { return kx == 0 ? 1 : 0; }
inline std::size_t x_end(std::size_t kx, std::size_t width) { return kx == 2 ? width - 1 : width; }

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  check_conv_shapes(input.shape(), weight.shape());
  const std::size_t batch = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t c_out = weight.dim(0);
  if (bias.size() != c_out) {
    throw std::invalid_argument("conv2d: bias length " + std::to_string(bias.size()) +
                                " does not match C_out=" + std::to_string(c_out));
  }
  Tensor<T> out({batch, c_out, h, w});
  const std::size_t plane = h * w;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < c_out; ++co) {
      T* dst = out.data() + (b * c_out + co) * plane;
      std::fill(dst, dst + plane, bias[co]);
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const T* src = input.data() + (b * c_in + ci) * plane;
        const T* k = weight.data() + (co * c_in + ci) * 9;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t y = 0; y < h; ++y) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            T* drow = dst + y * w;
            const T* srow = src + static_cast<std::size_t>(iy) * w;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const T kv = k[ky * 3 + kx];
              const std::size_t x0 = x_begin(kx), x1 = x_end(kx, w);
              for (std::size_t x = x0; x < x1; ++x) drow[x] += kv * srow[x + kx - 1];
            }
          }
        }
      }
    }
  }
  debug_check_finite(out, "conv2d");
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight,
                               const Tensor<T>& grad_out) {
  check_conv_shapes(input.shape(), weight.shape());
  const std::size_t batch = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t c_out = weight.dim(0);
  if (grad_out.shape() != Shape{batch, c_out, h, w}) {
    throw std::invalid_argument("conv2d backward: grad shape " + shape_string(grad_out.shape()));
  }
  Conv2dGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(weight.shape()), Tensor<T>({c_out})};
  const std::size_t plane = h * w;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < c_out; ++co) {
      const T* dy = grad_out.data() + (b * c_out + co) * plane;
      T db = 0;
      for (std::size_t i = 0; i < plane; ++i) db += dy[i];
      g.bias[co] += db;
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const T* src = input.data() + (b * c_in + ci) * plane;
        T* dsrc = g.input.data() + (b * c_in + ci) * plane;
        const T* k = weight.data() + (co * c_in + ci) * 9;
        T* dk = g.weight.data() + (co * c_in + ci) * 9;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const T kv = k[ky * 3 + kx];
            const std::size_t x0 = x_begin(kx), x1 = x_end(kx, w);
            T acc = 0;
            for (std::size_t y = 0; y < h; ++y) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              const T* dyrow = dy + y * w;
              const T* srow = src + static_cast<std::size_t>(iy) * w;
              T* drow = dsrc + static_cast<std::size_t>(iy) * w;
              for (std::size_t x = x0; x < x1; ++x) {
                acc += dyrow[x] * srow[x + kx - 1];
                drow[x + kx - 1] += kv * dyrow[x];
              }
            }
            dk[ky * 3 + kx] += acc;
          }
        }
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] < T{0} ? T{0} : input[i];
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  if (input.shape() != grad_out.shape()) {
    throw std::invalid_argument("relu backward: shape mismatch " + shape_string(grad_out.shape()));
  }
  Tensor<T> g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > T{0} ? grad_out[i] : T{0};
  return g;
}

template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& input, std::vector<std::size_t>* argmax) {
  require_rank4(input.shape(), "maxpool");
  const std::size_t batch = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < kPoolWindow || w < kPoolWindow) {
    throw std::invalid_argument("maxpool: spatial extent " + std::to_string(h) + "x" +
                                std::to_string(w) + " is smaller than the 4x4 window");
  }
  const std::size_t oh = h / kPoolWindow, ow = w / kPoolWindow;
  Tensor<T> out({batch, c, oh, ow});
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t p = 0; p < batch * c; ++p) {
    const T* src = input.data() + p * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = oy * kPoolWindow * w + ox * kPoolWindow;
        for (std::size_t dy = 0; dy < kPoolWindow; ++dy) {
          for (std::size_t dx = 0; dx < kPoolWindow; ++dx) {
            const std::size_t idx = (oy * kPoolWindow + dy) * w + ox * kPoolWindow + dx;
            if (src[idx] > src[best] || (std::isnan(src[idx]) && !std::isnan(src[best]))) best = idx;
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = src[best];
        if (argmax) (*argmax)[o] = p * h * w + best;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> maxpool_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                           const Tensor<T>& grad_out) {
  if (argmax.size() != grad_out.size()) {
    throw std::invalid_argument("maxpool backward: argmax/grad size mismatch");
  }
  Tensor<T> g(input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) g[argmax[o]] += grad_out[o];
  return g;
}

// ---- Conv2d ----

template <typename T>
Conv2d<T>::Conv2d(const std::string& prefix, std::size_t in_channels, std::size_t out_channels)
    : weight(prefix + ".weight", Tensor<T>({out_channels, in_channels, 3, 3})),
      bias(prefix + ".bias", Tensor<T>({out_channels})) {}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& input) {
  input_ = input;
  return conv2d_forward(input, weight.value, bias.value);
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
  Conv2dGrads<T> g = conv2d_backward(input_, weight.value, grad_out);
  for (std::size_t i = 0; i < g.weight.size(); ++i) weight.grad[i] += g.weight[i];
  for (std::size_t i = 0; i < g.bias.size(); ++i) bias.grad[i] += g.bias[i];
  return std::move(g.input);
}

template <typename T>
Tensor<T> Conv2d<T>::infer(const Tensor<T>& input) const {
  return conv2d_forward(input, weight.value, bias.value);
}

// ---- BatchNorm2d ----

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& prefix, std::size_t channels)
    : gamma(prefix + ".gamma", Tensor<T>({channels}, T{1})),
      beta(prefix + ".beta", Tensor<T>({channels}, T{0})),
      running_mean({channels}, T{0}),
      running_var({channels}, T{1}),
      running_mean_id(prefix + ".running_mean"),
      running_var_id(prefix + ".running_var") {}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& input, Mode mode) {
  require_rank4(input.shape(), "batchnorm2d");
  const std::size_t batch = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (c != channels()) {
    throw std::invalid_argument("batchnorm2d: channel axis mismatch, input C=" + std::to_string(c) +
                                " but layer has " + std::to_string(channels()));
  }
  const std::size_t n = batch * plane;
  if (mode == Mode::kTrain && n < 2) {
    throw std::invalid_argument("batchnorm2d: train mode needs at least 2 values per channel");
  }
  mode_ = mode;
  normalized_ = Tensor<T>(input.shape());
  inv_std_.assign(c, 0.0);
  Tensor<T> out(input.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::kTrain) {
      for (std::size_t b = 0; b < batch; ++b) {
        const T* src = input.data() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) mean += src[i];
      }
      mean /= static_cast<double>(n);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* src = input.data() + (b * c + ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = src[i] - mean;
          var += d * d;
        }
      }
      const double unbiased = var / static_cast<double>(n - 1);
      var /= static_cast<double>(n);
      running_mean[ch] = static_cast<T>((1.0 - momentum) * running_mean[ch] + momentum * mean);
      running_var[ch] = static_cast<T>((1.0 - momentum) * running_var[ch] + momentum * unbiased);
    } else {
      mean = running_mean[ch];
      var = running_var[ch];
    }
    const double inv_std = 1.0 / std::sqrt(var + eps);
    inv_std_[ch] = inv_std;
    const double g = gamma.value[ch], bt = beta.value[ch];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xhat = (input[off + i] - mean) * inv_std;
        normalized_[off + i] = static_cast<T>(xhat);
        out[off + i] = static_cast<T>(g * xhat + bt);
      }
    }
  }
  debug_check_finite(out, "batchnorm2d");
  return out;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad_out) {
  if (grad_out.shape() != normalized_.shape()) {
    throw std::invalid_argument("batchnorm2d backward: grad shape " + shape_string(grad_out.shape()));
  }
  const std::size_t batch = grad_out.dim(0), c = grad_out.dim(1),
                    plane = grad_out.dim(2) * grad_out.dim(3);
  const double n = static_cast<double>(batch * plane);
  Tensor<T> g(grad_out.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += grad_out[off + i];
        sum_dy_xhat += static_cast<double>(grad_out[off + i]) * normalized_[off + i];
      }
    }
    gamma.grad[ch] += static_cast<T>(sum_dy_xhat);
    beta.grad[ch] += static_cast<T>(sum_dy);
    const double gm = gamma.value[ch];
    const double inv_std = inv_std_[ch];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (mode_ == Mode::kTrain) {
          g[off + i] = static_cast<T>(gm * inv_std / n *
                                      (n * grad_out[off + i] - sum_dy - normalized_[off + i] * sum_dy_xhat));
        } else {
          g[off + i] = static_cast<T>(gm * inv_std * grad_out[off + i]);
        }
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::infer(const Tensor<T>& input) const {
  require_rank4(input.shape(), "batchnorm2d");
  const std::size_t batch = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (c != channels()) {
    throw std::invalid_argument("batchnorm2d: channel axis mismatch, input C=" + std::to_string(c));
  }
  Tensor<T> out(input.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mean = running_mean[ch];
    const double inv_std = 1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps);
    const double g = gamma.value[ch], bt = beta.value[ch];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        out[off + i] = static_cast<T>(g * ((input[off + i] - mean) * inv_std) + bt);
      }
    }
  }
  return out;
}

// ---- ReLU / MaxPool4 ----

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& input) {
  input_ = input;
  return relu_forward(input);
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_out) const {
  return relu_backward(input_, grad_out);
}

template <typename T>
Tensor<T> MaxPool4<T>::forward(const Tensor<T>& input) {
  input_shape_ = input.shape();
  return maxpool_forward(input, &argmax_);
}

template <typename T>
Tensor<T> MaxPool4<T>::backward(const Tensor<T>& grad_out) const {
  return maxpool_backward(input_shape_, argmax_, grad_out);
}

#define HALLU_INSTANTIATE_LAYERS(T)                                                              \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Conv2dGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> relu_forward(const Tensor<T>&);                                           \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> maxpool_forward(const Tensor<T>&, std::vector<std::size_t>*);             \
  template Tensor<T> maxpool_backward(const Shape&, const std::vector<std::size_t>&,           \
                                      const Tensor<T>&);                                       \
  template class Conv2d<T>;                                                                    \
  template class BatchNorm2d<T>;                                                               \
  template class ReLU<T>;                                                                      \
  template class MaxPool4<T>;

HALLU_INSTANTIATE_LAYERS(float)
HALLU_INSTANTIATE_LAYERS(double)

#undef HALLU_INSTANTIATE_LAYERS

}  // namespace hallu::nn
