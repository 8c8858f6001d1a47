#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hallu/audio/wav.hpp"

namespace hallu::audio {

/// Log-mel extraction parameters. Defaults are the ESC-50 setting
/// (5 s at 16 kHz, hop 502 -> 160 x 128).
struct SpectrogramConfig {
  double sample_rate = 16000.0;
  std::size_t n_fft = 2048;
  std::size_t hop = 502;
  std::size_t n_mels = 128;
  double f_min = 0.0;
  double f_max = 8000.0;
  double top_db = 80.0;
  double amin = 1e-10;
  std::size_t clip_samples = 80000;
  /// Frame count delivered to the network; 0 keeps 1 + floor(clip/hop).
  /// Extra frames are center-cropped, a shortfall is a configuration error.
  std::size_t target_frames = 160;

  /// Throws ConfigError on violated invariants.
  void validate() const;
  std::size_t natural_frames() const { return 1 + clip_samples / hop; }
  std::size_t frames() const { return target_frames == 0 ? natural_frames() : target_frames; }
  std::string fingerprint_string() const;
  std::uint64_t fingerprint() const;

  static SpectrogramConfig esc50();
  /// Peak-centred 2 s clips at hop 201.
  static SpectrogramConfig kaggle18();
};

/// T x F grid of dB values, time-major.
struct LogMelSpectrogram {
  std::size_t frames = 0;  // T
  std::size_t bands = 0;   // F
  std::vector<float> values;
  std::uint64_t config_hash = 0;

  float at(std::size_t t, std::size_t f) const { return values[t * bands + f]; }
  float& at(std::size_t t, std::size_t f) { return values[t * bands + f]; }
};

/// n_mels x (n_fft/2 + 1) Slaney-style mel filterbank (linear below 1 kHz,
/// logarithmic above), each filter scaled by 2 / bandwidth in Hz.
struct MelFilterbank {
  std::size_t n_mels = 0;
  std::size_t n_bins = 0;
  std::vector<double> weights;       // row-major
  std::vector<double> center_hz;     // n_mels centres
  double weight(std::size_t m, std::size_t k) const { return weights[m * n_bins + k]; }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

MelFilterbank mel_filterbank(const SpectrogramConfig& config);

/// Centred Hann STFT (reflect padding) -> power -> mel -> dB relative to the
/// clip maximum, floored at max - top_db; time-major output.
LogMelSpectrogram log_mel(const Waveform& w, const SpectrogramConfig& config);

/// Full pipeline from a decoded file: resample, peak crop to clip length,
/// log-mel.
LogMelSpectrogram extract(const Waveform& w, const SpectrogramConfig& config);

/// Per-clip standardization (x - mean) / (std + eps) applied before the network.
std::vector<float> standardize(std::span<const float> values, double eps = 1e-6);

}  // namespace hallu::audio
