#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hallu::audio {

struct Waveform {
  std::vector<float> samples;  // mono, nominal range [-1, 1]
  double sample_rate = 0.0;    // Hz

  double duration() const { return sample_rate > 0 ? samples.size() / sample_rate : 0.0; }
};

class DecodeError : public std::runtime_error {
 public:
  enum class Kind { kMalformedHeader, kUnsupportedCodec, kEmptyData };

  DecodeError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// RIFF/WAVE with PCM16 or IEEE float32 samples. Channels are averaged to
/// mono; int16 is scaled by 1/32768 so -32768 maps to exactly -1.
Waveform decode_wav(std::span<const std::byte> bytes);
Waveform read_wav(const std::filesystem::path& path);

/// Mono PCM16 encoder (used for fixtures and synthetic corpora).
std::vector<std::byte> encode_wav_pcm16(const Waveform& w);
std::vector<std::byte> encode_wav_f32(const std::vector<std::vector<float>>& channels, double sample_rate);
void write_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace hallu::audio
