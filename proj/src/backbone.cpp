#include "hallu/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "hallu/errors.hpp"
#include "hallu/hash.hpp"
#include "hallu/rng.hpp"

namespace hallu {

using nn::Mode;
using nn::Tensor;

std::size_t BackboneSpec::embedding_dim() const {
  constexpr std::size_t kReduction = nn::kPoolWindow * nn::kPoolWindow * nn::kPoolWindow;
  return channels[2] * (height / kReduction) * (width / kReduction);
}

void BackboneSpec::validate() const {
  if (height < 64 || width < 64) {
    throw ConfigError("backbone input " + std::to_string(height) + "x" + std::to_string(width) +
                      " is too small: three 4x4 poolings need T >= 64 and F >= 64");
  }
  if (in_channels == 0 || channels[0] == 0 || channels[1] == 0 || channels[2] == 0) {
    throw ConfigError("backbone channel widths must be positive");
  }
}

std::string BackboneSpec::fingerprint() const {
  return "backbone/v1 in=" + std::to_string(in_channels) + " c=" + std::to_string(channels[0]) + "," +
         std::to_string(channels[1]) + "," + std::to_string(channels[2]) + " hw=" + std::to_string(height) +
         "x" + std::to_string(width);
}

std::uint64_t BackboneSpec::hash() const { return fnv1a64(fingerprint()); }

template <typename T>
Backbone<T>::Backbone(const BackboneSpec& spec, const std::string& prefix) : spec_(spec), prefix_(prefix) {
  spec_.validate();
  std::size_t in = spec_.in_channels;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string name = prefix_ + ".block" + std::to_string(i + 1);
    blocks_[i].conv = nn::Conv2d<T>(name + ".conv", in, spec_.channels[i]);
    blocks_[i].bn = nn::BatchNorm2d<T>(name + ".bn", spec_.channels[i]);
    in = spec_.channels[i];
  }
}

template <typename T>
void Backbone<T>::check_input(const Tensor<T>& input) const {
  const nn::Shape& s = input.shape();
  if (s.size() != 4 || s[1] != spec_.in_channels || s[2] != spec_.height || s[3] != spec_.width) {
    throw std::invalid_argument("backbone " + prefix_ + ": expected input [B," +
                                std::to_string(spec_.in_channels) + "," + std::to_string(spec_.height) +
                                "," + std::to_string(spec_.width) + "], got " + nn::shape_string(s));
  }
}

template <typename T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& input, Mode mode) {
  check_input(input);
  Tensor<T> x = input;
  for (Block& b : blocks_) {
    x = b.conv.forward(x);
    x = b.bn.forward(x, mode);
    x = b.relu.forward(x);
    x = b.pool.forward(x);
  }
  pooled_shape_ = x.shape();
  const std::size_t batch = x.dim(0);
  return std::move(x).reshaped({batch, spec_.embedding_dim()});
}

template <typename T>
Tensor<T> Backbone<T>::backward(const Tensor<T>& grad_embedding) {
  if (pooled_shape_.empty() || grad_embedding.size() != nn::shape_size(pooled_shape_)) {
    throw std::invalid_argument("backbone " + prefix_ + ": backward without matching forward");
  }
  Tensor<T> g = grad_embedding.reshaped(pooled_shape_);
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    Block& b = blocks_[i];
    g = b.pool.backward(g);
    g = b.relu.backward(g);
    g = b.bn.backward(g);
    g = b.conv.backward(g);
  }
  return g;
}

template <typename T>
Tensor<T> Backbone<T>::infer(const Tensor<T>& input) const {
  check_input(input);
  Tensor<T> x = input;
  for (const Block& b : blocks_) {
    x = b.conv.infer(x);
    x = b.bn.infer(x);
    x = nn::relu_forward(x);
    x = nn::maxpool_forward(x);
  }
  const std::size_t batch = x.dim(0);
  return std::move(x).reshaped({batch, spec_.embedding_dim()});
}

template <typename T>
std::vector<nn::Parameter<T>*> Backbone<T>::parameters() {
  std::vector<nn::Parameter<T>*> out;
  for (Block& b : blocks_) {
    out.insert(out.end(), {&b.conv.weight, &b.conv.bias, &b.bn.gamma, &b.bn.beta});
  }
  return out;
}

template <typename T>
std::vector<const nn::Parameter<T>*> Backbone<T>::parameters() const {
  std::vector<const nn::Parameter<T>*> out;
  for (const Block& b : blocks_) {
    out.insert(out.end(), {&b.conv.weight, &b.conv.bias, &b.bn.gamma, &b.bn.beta});
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Backbone<T>::buffers() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (Block& b : blocks_) {
    out.emplace_back(b.bn.running_mean_id, &b.bn.running_mean);
    out.emplace_back(b.bn.running_var_id, &b.bn.running_var);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Backbone<T>::buffers() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (const Block& b : blocks_) {
    out.emplace_back(b.bn.running_mean_id, &b.bn.running_mean);
    out.emplace_back(b.bn.running_var_id, &b.bn.running_var);
  }
  return out;
}

template <typename T>
void Backbone<T>::zero_grad() {
  for (nn::Parameter<T>* p : parameters()) p->zero_grad();
}

template <typename T>
void Backbone<T>::export_to(nn::Checkpoint& ckpt) const {
  using Kind = nn::CheckpointTensor::Kind;
  for (const nn::Parameter<T>* p : parameters()) {
    ckpt.tensors.push_back({p->id, Kind::kParameter, p->value.shape(),
                            std::vector<float>(p->value.values().begin(), p->value.values().end())});
  }
  for (const auto& [id, t] : buffers()) {
    ckpt.tensors.push_back(
        {id, Kind::kBuffer, t->shape(), std::vector<float>(t->values().begin(), t->values().end())});
  }
}

template <typename T>
void Backbone<T>::import_from(const nn::Checkpoint& ckpt) {
  auto load = [&](const std::string& id, Tensor<T>& dst) {
    const nn::CheckpointTensor* t = ckpt.find(id);
    if (t == nullptr) throw ConfigError("checkpoint is missing tensor " + id);
    if (t->shape != dst.shape()) {
      throw ConfigError("checkpoint tensor " + id + " has shape " + nn::shape_string(t->shape) +
                        ", model expects " + nn::shape_string(dst.shape()));
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t->values[i]);
  };
  for (nn::Parameter<T>* p : parameters()) {
    load(p->id, p->value);
    p->zero_grad();
  }
  for (auto& [id, t] : buffers()) load(id, *t);
}

template <typename T>
Backbone<T> init_backbone(const BackboneSpec& spec, std::uint64_t seed, const std::string& prefix) {
  Backbone<T> net(spec, prefix);
  Rng rng(seed);
  for (nn::Parameter<T>* p : net.parameters()) {
    if (p->value.rank() != 4) continue;  // biases stay 0, gamma 1, beta 0
    const double fan_in = static_cast<double>(p->value.dim(1) * p->value.dim(2) * p->value.dim(3));
    const double stddev = std::sqrt(2.0 / fan_in);
    for (T& v : p->value.values()) v = static_cast<T>(stddev * rng.normal());
  }
  return net;
}

template <typename T>
std::size_t param_count(const Backbone<T>& backbone) {
  std::size_t n = 0;
  for (const nn::Parameter<T>* p : backbone.parameters()) n += p->value.size();
  return n;
}

template class Backbone<float>;
template class Backbone<double>;
template Backbone<float> init_backbone(const BackboneSpec&, std::uint64_t, const std::string&);
template Backbone<double> init_backbone(const BackboneSpec&, std::uint64_t, const std::string&);
template std::size_t param_count(const Backbone<float>&);
template std::size_t param_count(const Backbone<double>&);

}  // namespace hallu
