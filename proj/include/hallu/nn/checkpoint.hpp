#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hallu/nn/tensor.hpp"

namespace hallu::nn {

struct CheckpointTensor {
  enum class Kind : std::uint32_t { kParameter = 0, kBuffer = 1 };
  std::string id;
  Kind kind = Kind::kParameter;
  Shape shape;
  std::vector<float> values;
};

/// Versioned container: parameter id -> shape + f32 buffer, plus batch-norm
/// running statistics (as buffers), the epoch counter and the RNG seed.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint64_t spec_hash = 0;  // backbone spec + mask mode; guards mismatched evaluation
  std::string mask_mode;
  std::uint64_t epoch = 0;
  std::uint64_t seed = 0;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& id) const;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace hallu::nn
