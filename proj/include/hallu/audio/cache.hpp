#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "hallu/audio/spectrogram.hpp"

namespace hallu::audio {

// On-disk spectrogram cache, one file per clip:
//   "HALU" | u32 version | u32 T | u32 F        (16-byte header)
//   T*F f32, time-major
//   u64 config fingerprint
// All integers and floats little-endian.
inline constexpr std::uint32_t kCacheVersion = 1;

void write_cache(const std::filesystem::path& path, const LogMelSpectrogram& s);
LogMelSpectrogram read_cache(const std::filesystem::path& path);

/// Fingerprint stored in an existing cache file, or nullopt if the file is
/// absent or unreadable.
std::optional<std::uint64_t> cached_fingerprint(const std::filesystem::path& path);

}  // namespace hallu::audio
