#include "hallu/nn/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include "hallu/binary_io.hpp"

namespace hallu::nn {

namespace {
constexpr char kMagic[8] = {'H', 'A', 'L', 'U', 'C', 'K', 'P', 'T'};
}

const CheckpointTensor* Checkpoint::find(const std::string& id) const {
  for (const CheckpointTensor& t : tensors) {
    if (t.id == id) return &t;
  }
  return nullptr;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    io::put_u32(out, Checkpoint::kVersion);
    io::put_u64(out, ckpt.spec_hash);
    io::put_string(out, ckpt.mask_mode);
    io::put_u64(out, ckpt.epoch);
    io::put_u64(out, ckpt.seed);
    io::put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const CheckpointTensor& t : ckpt.tensors) {
      io::put_string(out, t.id);
      io::put_u32(out, static_cast<std::uint32_t>(t.kind));
      io::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
      for (const std::size_t d : t.shape) io::put_u32(out, static_cast<std::uint32_t>(d));
      if (shape_size(t.shape) != t.values.size()) {
        throw std::invalid_argument("checkpoint tensor " + t.id + " has inconsistent shape");
      }
      for (const float v : t.values) io::put_f32(out, v);
    }
    if (!out) throw std::runtime_error("failed writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  try {
    char magic[8];
    io::read_exact(in, magic, sizeof(magic));
    if (!std::equal(magic, magic + 8, kMagic)) throw std::runtime_error("bad magic");
    const std::uint32_t version = io::get_u32(in);
    if (version != Checkpoint::kVersion) {
      throw std::runtime_error("unsupported version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.spec_hash = io::get_u64(in);
    ckpt.mask_mode = io::get_string(in);
    ckpt.epoch = io::get_u64(in);
    ckpt.seed = io::get_u64(in);
    const std::uint32_t count = io::get_u32(in);
    ckpt.tensors.reserve(count);
    for (std::uint32_t k = 0; k < count; ++k) {
      CheckpointTensor t;
      t.id = io::get_string(in);
      const std::uint32_t kind = io::get_u32(in);
      if (kind > 1) throw std::runtime_error("bad tensor kind for " + t.id);
      t.kind = static_cast<CheckpointTensor::Kind>(kind);
      const std::uint32_t rank = io::get_u32(in);
      if (rank > 8) throw std::runtime_error("bad rank for " + t.id);
      for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(io::get_u32(in));
      const std::size_t n = shape_size(t.shape);
      if (n > (std::size_t{1} << 32)) throw std::runtime_error("tensor too large: " + t.id);
      t.values.resize(n);
      for (float& v : t.values) v = io::get_f32(in);
      ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("corrupt checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace hallu::nn
