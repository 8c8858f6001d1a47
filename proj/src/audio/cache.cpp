#include "hallu/audio/cache.hpp"

#include <fstream>
#include <stdexcept>

#include "hallu/binary_io.hpp"

namespace hallu::audio {

namespace {
constexpr char kMagic[4] = {'H', 'A', 'L', 'U'};
}

void write_cache(const std::filesystem::path& path, const LogMelSpectrogram& s) {
  if (s.values.size() != s.frames * s.bands) throw std::invalid_argument("write_cache: inconsistent spectrogram");
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write cache file: " + tmp.string());
    out.write(kMagic, 4);
    io::put_u32(out, kCacheVersion);
    io::put_u32(out, static_cast<std::uint32_t>(s.frames));
    io::put_u32(out, static_cast<std::uint32_t>(s.bands));
    for (const float v : s.values) io::put_f32(out, v);
    io::put_u64(out, s.config_hash);
    if (!out) throw std::runtime_error("failed writing cache file: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LogMelSpectrogram read_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open cache file: " + path.string());
  try {
    char magic[4];
    io::read_exact(in, magic, 4);
    if (!std::equal(magic, magic + 4, kMagic)) throw std::runtime_error("bad magic");
    const std::uint32_t version = io::get_u32(in);
    if (version != kCacheVersion) throw std::runtime_error("unsupported version " + std::to_string(version));
    LogMelSpectrogram s;
    s.frames = io::get_u32(in);
    s.bands = io::get_u32(in);
    if (s.frames * s.bands > (std::size_t{1} << 28)) throw std::runtime_error("implausible extent");
    s.values.resize(s.frames * s.bands);
    for (float& v : s.values) v = io::get_f32(in);
    s.config_hash = io::get_u64(in);
    return s;
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("corrupt cache file " + path.string() + ": " + e.what());
  }
}

std::optional<std::uint64_t> cached_fingerprint(const std::filesystem::path& path) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec || size < 24) return std::nullopt;
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  try {
    char magic[4];
    io::read_exact(in, magic, 4);
    if (!std::equal(magic, magic + 4, kMagic)) return std::nullopt;
    if (io::get_u32(in) != kCacheVersion) return std::nullopt;
    const std::uint64_t t = io::get_u32(in), f = io::get_u32(in);
    if (size != 16 + 4 * t * f + 8) return std::nullopt;
    in.seekg(static_cast<std::streamoff>(16 + 4 * t * f));
    return io::get_u64(in);
  } catch (const std::runtime_error&) {
    return std::nullopt;
  }
}

}  // namespace hallu::audio
