#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hallu/nn/checkpoint.hpp"
#include "hallu/nn/layers.hpp"
#include "hallu/nn/tensor.hpp"

namespace hallu {

/// Three conv3x3 -> batch-norm -> ReLU -> maxpool4x4 blocks over a
/// 1-channel T x F image (time as height, mel bands as width).
struct BackboneSpec {
  std::array<std::size_t, 3> channels{64, 64, 64};
  std::size_t in_channels = 1;
  std::size_t height = 160;  // T
  std::size_t width = 128;   // F

  /// C3 * floor(T/64) * floor(F/64)
  std::size_t embedding_dim() const;
  /// Throws ConfigError when T or F < 64 or a width is zero.
  void validate() const;
  std::string fingerprint() const;
  std::uint64_t hash() const;

  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneSpec& spec, const std::string& prefix);

  const BackboneSpec& spec() const { return spec_; }
  const std::string& prefix() const { return prefix_; }

  /// [B,1,T,F] -> [B,D]. Records activations for backward().
  nn::Tensor<T> forward(const nn::Tensor<T>& input, nn::Mode mode);
  /// Accumulates parameter gradients; returns d loss / d input.
  nn::Tensor<T> backward(const nn::Tensor<T>& grad_embedding);
  /// Eval-mode forward without recording anything; safe to share across threads.
  nn::Tensor<T> infer(const nn::Tensor<T>& input) const;

  std::vector<nn::Parameter<T>*> parameters();
  std::vector<const nn::Parameter<T>*> parameters() const;
  /// Running statistics, (id, tensor) in block order.
  std::vector<std::pair<std::string, nn::Tensor<T>*>> buffers();
  std::vector<std::pair<std::string, const nn::Tensor<T>*>> buffers() const;
  void zero_grad();

  void export_to(nn::Checkpoint& ckpt) const;
  /// Throws ConfigError if an id is missing or a shape disagrees.
  void import_from(const nn::Checkpoint& ckpt);

  template <typename U>
  void copy_from(const Backbone<U>& other);

 private:
  struct Block {
    nn::Conv2d<T> conv;
    nn::BatchNorm2d<T> bn;
    nn::ReLU<T> relu;
    nn::MaxPool4<T> pool;
  };

  void check_input(const nn::Tensor<T>& input) const;

  BackboneSpec spec_;
  std::string prefix_;
  std::array<Block, 3> blocks_;
  nn::Shape pooled_shape_;
};

/// Kaiming-normal (fan-in) conv weights, zero bias, gamma 1, beta 0.
template <typename T>
Backbone<T> init_backbone(const BackboneSpec& spec, std::uint64_t seed, const std::string& prefix = "f");

/// Trainable scalars including batch-norm gamma/beta, excluding running stats.
template <typename T>
std::size_t param_count(const Backbone<T>& backbone);

template <typename T>
template <typename U>
void Backbone<T>::copy_from(const Backbone<U>& other) {
  auto dst = parameters();
  auto src = other.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    for (std::size_t k = 0; k < dst[i]->value.size(); ++k) {
      dst[i]->value[k] = static_cast<T>(src[i]->value[k]);
    }
  }
  auto dbuf = buffers();
  auto sbuf = other.buffers();
  for (std::size_t i = 0; i < dbuf.size(); ++i) {
    for (std::size_t k = 0; k < dbuf[i].second->size(); ++k) {
      (*dbuf[i].second)[k] = static_cast<T>((*sbuf[i].second)[k]);
    }
  }
}

}  // namespace hallu
