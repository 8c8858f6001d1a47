#include "hallu/audio/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace hallu::audio {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const std::byte* p) {
  return static_cast<std::uint16_t>(std::to_integer<unsigned>(p[0]) | (std::to_integer<unsigned>(p[1]) << 8));
}

std::uint32_t le32(const std::byte* p) {
  return std::to_integer<std::uint32_t>(p[0]) | (std::to_integer<std::uint32_t>(p[1]) << 8) |
         (std::to_integer<std::uint32_t>(p[2]) << 16) | (std::to_integer<std::uint32_t>(p[3]) << 24);
}

bool tag_is(const std::byte* p, const char* tag) { return std::memcmp(p, tag, 4) == 0; }

void append16(std::vector<std::byte>& out, std::uint16_t v) {
  out.push_back(static_cast<std::byte>(v & 0xff));
  out.push_back(static_cast<std::byte>(v >> 8));
}

void append32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
}

void append_tag(std::vector<std::byte>& out, const char* tag) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>(tag[i]));
}

std::vector<std::byte> riff(std::uint16_t format, std::uint16_t channels, std::uint32_t rate,
                            std::uint16_t bits, const std::vector<std::byte>& data) {
  std::vector<std::byte> out;
  const std::uint16_t block_align = static_cast<std::uint16_t>(channels * bits / 8);
  append_tag(out, "RIFF");
  append32(out, static_cast<std::uint32_t>(4 + 8 + 16 + 8 + data.size()));
  append_tag(out, "WAVE");
  append_tag(out, "fmt ");
  append32(out, 16);
  append16(out, format);
  append16(out, channels);
  append32(out, rate);
  append32(out, rate * block_align);
  append16(out, block_align);
  append16(out, bits);
  append_tag(out, "data");
  append32(out, static_cast<std::uint32_t>(data.size()));
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

}  // namespace

Waveform decode_wav(std::span<const std::byte> bytes) {
  using Kind = DecodeError::Kind;
  if (bytes.size() < 12 || !tag_is(bytes.data(), "RIFF") || !tag_is(bytes.data() + 8, "WAVE")) {
    throw DecodeError(Kind::kMalformedHeader, "wav: missing RIFF/WAVE header");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::span<const std::byte> data;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::byte* chunk = bytes.data() + pos;
    const std::uint32_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = bytes.size() - body;
    if (tag_is(chunk, "fmt ")) {
      if (size < 16 || size > avail) throw DecodeError(Kind::kMalformedHeader, "wav: truncated fmt chunk");
      format = le16(chunk + 8);
      channels = le16(chunk + 10);
      rate = le32(chunk + 12);
      bits = le16(chunk + 22);
      if (format == kFormatExtensible && size >= 40) format = le16(chunk + 8 + 24);
      have_fmt = true;
    } else if (tag_is(chunk, "data")) {
      // Some writers leave a placeholder size on streamed files; clamp to what is present.
      data = bytes.subspan(body, std::min<std::size_t>(size, avail));
      have_data = true;
      if (size > avail) break;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw DecodeError(Kind::kMalformedHeader, "wav: no fmt chunk");
  if (!have_data) throw DecodeError(Kind::kMalformedHeader, "wav: no data chunk");
  if (channels == 0 || rate == 0) throw DecodeError(Kind::kMalformedHeader, "wav: zero channels or rate");

  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32) {
    throw DecodeError(Kind::kUnsupportedCodec, "wav: unsupported codec (format " + std::to_string(format) +
                                                   ", " + std::to_string(bits) + " bits)");
  }
  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  const std::size_t frames = data.size() / frame_bytes;
  if (frames == 0) throw DecodeError(Kind::kEmptyData, "wav: data chunk holds no samples");

  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const std::byte* frame = data.data() + i * frame_bytes;
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      if (pcm16) {
        acc += static_cast<std::int16_t>(le16(frame + 2 * c)) / 32768.0;
      } else {
        acc += std::bit_cast<float>(le32(frame + 4 * c));
      }
    }
    w.samples[i] = static_cast<float>(acc / channels);
  }
  return w;
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open audio file: " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_wav(std::as_bytes(std::span<const char>(raw)));
  } catch (const DecodeError& e) {
    throw DecodeError(e.kind(), path.string() + ": " + e.what());
  }
}

std::vector<std::byte> encode_wav_pcm16(const Waveform& w) {
  std::vector<std::byte> data;
  data.reserve(w.samples.size() * 2);
  for (const float s : w.samples) {
    const double scaled = std::round(std::clamp(static_cast<double>(s), -1.0, 1.0) * 32768.0);
    const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    append16(data, static_cast<std::uint16_t>(v));
  }
  return riff(kFormatPcm, 1, static_cast<std::uint32_t>(w.sample_rate), 16, data);
}

std::vector<std::byte> encode_wav_f32(const std::vector<std::vector<float>>& channels, double sample_rate) {
  std::vector<std::byte> data;
  const std::size_t frames = channels.empty() ? 0 : channels.front().size();
  for (std::size_t i = 0; i < frames; ++i) {
    for (const auto& ch : channels) append32(data, std::bit_cast<std::uint32_t>(ch[i]));
  }
  return riff(kFormatFloat, static_cast<std::uint16_t>(channels.size()),
              static_cast<std::uint32_t>(sample_rate), 32, data);
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  const std::vector<std::byte> bytes = encode_wav_pcm16(w);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write audio file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace hallu::audio
