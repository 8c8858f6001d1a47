#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hallu/nn/layers.hpp"

namespace hallu {

using ConvBackwardFn = std::function<nn::Conv2dGrads<double>(const nn::Tensor<double>&, const nn::Tensor<double>&,
                                                             const nn::Tensor<double>&)>;

struct GradcheckOptions {
  std::uint64_t seed = 20220411;
  double tolerance = 1e-4;
  double epsilon = 1e-5;
  /// Backward kernel used by the "conv2d" component; tests swap in a broken one.
  ConvBackwardFn conv_backward;
};

struct GradcheckComponent {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::uint64_t seed = 0;
  double tolerance = 0.0;
  double seconds = 0.0;
  std::vector<GradcheckComponent> components;

  bool passed() const;
  /// Names of failing components, comma separated.
  std::string failures() const;
  std::string format() const;
};

/// 64-bit central differences against every layer's backward and against the
/// full multi-view episode loss (both distance conventions).
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace hallu
