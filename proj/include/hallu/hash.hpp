#pragma once

#include <cstdint>
#include <string_view>

namespace hallu {

/// 64-bit FNV-1a. Stable across platforms; used for config fingerprints.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace hallu
