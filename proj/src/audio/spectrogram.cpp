#include "hallu/audio/spectrogram.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include "hallu/audio/resample.hpp"
#include "hallu/errors.hpp"
#include "hallu/hash.hpp"

namespace hallu::audio {

namespace {

// FFTW's planner is not re-entrant; execution on distinct plans is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  void power(std::vector<double>& dst) {
    fftw_execute(plan_);
    dst.resize(n_ / 2 + 1);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
  }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

constexpr double kMelLinearStep = 200.0 / 3.0;
constexpr double kMelLogStartHz = 1000.0;
constexpr double kMelLogStartMel = kMelLogStartHz / kMelLinearStep;  // 15
const double kMelLogStep = std::log(6.4) / 27.0;

}  // namespace

void SpectrogramConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("spectrogram config: " + msg); };
  if (!(sample_rate > 0.0)) fail("sample_rate must be positive");
  if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0)) {
    fail("need 0 <= f_min < f_max <= sample_rate/2 (f_min=" + fmt_double(f_min) +
         ", f_max=" + fmt_double(f_max) + ")");
  }
  if (hop < 1) fail("hop must be >= 1");
  if (n_fft < hop) fail("n_fft must be >= hop");
  if (n_fft < 2) fail("n_fft must be >= 2");
  if (n_mels < 2) fail("n_mels must be >= 2");
  if (!(top_db > 0.0)) fail("top_db must be positive");
  if (!(amin > 0.0)) fail("amin must be positive");
  if (clip_samples <= n_fft / 2) fail("clip_samples must exceed n_fft/2 for reflect padding");
  if (target_frames > natural_frames()) {
    fail("clip of " + std::to_string(clip_samples) + " samples at hop " + std::to_string(hop) + " yields " +
         std::to_string(natural_frames()) + " frames, fewer than the requested " + std::to_string(target_frames));
  }
}

std::string SpectrogramConfig::fingerprint_string() const {
  return "logmel/v1 sr=" + fmt_double(sample_rate) + " n_fft=" + std::to_string(n_fft) +
         " hop=" + std::to_string(hop) + " n_mels=" + std::to_string(n_mels) + " fmin=" + fmt_double(f_min) +
         " fmax=" + fmt_double(f_max) + " top_db=" + fmt_double(top_db) + " amin=" + fmt_double(amin) +
         " clip=" + std::to_string(clip_samples) + " frames=" + std::to_string(frames()) +
         " window=hann pad=reflect mel=slaney norm=area";
}

std::uint64_t SpectrogramConfig::fingerprint() const { return fnv1a64(fingerprint_string()); }

SpectrogramConfig SpectrogramConfig::esc50() { return SpectrogramConfig{}; }

SpectrogramConfig SpectrogramConfig::kaggle18() {
  SpectrogramConfig c;
  c.hop = 201;
  c.clip_samples = 32000;
  c.target_frames = 160;
  return c;
}

double hz_to_mel(double hz) {
  if (hz < kMelLogStartHz) return hz / kMelLinearStep;
  return kMelLogStartMel + std::log(hz / kMelLogStartHz) / kMelLogStep;
}

double mel_to_hz(double mel) {
  if (mel < kMelLogStartMel) return mel * kMelLinearStep;
  return kMelLogStartHz * std::exp(kMelLogStep * (mel - kMelLogStartMel));
}

MelFilterbank mel_filterbank(const SpectrogramConfig& config) {
  config.validate();
  MelFilterbank fb;
  fb.n_mels = config.n_mels;
  fb.n_bins = config.n_fft / 2 + 1;
  fb.weights.assign(fb.n_mels * fb.n_bins, 0.0);

  const double mel_lo = hz_to_mel(config.f_min), mel_hi = hz_to_mel(config.f_max);
  std::vector<double> edges(config.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(edges.size() - 1);
    edges[i] = mel_to_hz(mel);
  }
  fb.center_hz.assign(edges.begin() + 1, edges.end() - 1);

  for (std::size_t m = 0; m < fb.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    const double norm = 2.0 / (hi - lo);
    bool any = false;
    for (std::size_t k = 0; k < fb.n_bins; ++k) {
      const double f = static_cast<double>(k) * config.sample_rate / static_cast<double>(config.n_fft);
      const double rise = (f - lo) / (mid - lo);
      const double fall = (hi - f) / (hi - mid);
      const double w = std::max(0.0, std::min(rise, fall));
      if (w > 0.0) {
        fb.weights[m * fb.n_bins + k] = w * norm;
        any = true;
      }
    }
    if (!any) {
      throw ConfigError("mel filterbank: band " + std::to_string(m) + " (" + fmt_double(mid) +
                        " Hz) covers no FFT bin; reduce n_mels or increase n_fft");
    }
  }
  return fb;
}

LogMelSpectrogram log_mel(const Waveform& w, const SpectrogramConfig& config) {
  config.validate();
  if (w.sample_rate != config.sample_rate) {
    throw std::invalid_argument("log_mel: expected sample_rate " + fmt_double(config.sample_rate) + ", got " +
                                fmt_double(w.sample_rate));
  }
  if (w.samples.size() != config.clip_samples) {
    throw std::invalid_argument("log_mel: expected " + std::to_string(config.clip_samples) + " samples, got " +
                                std::to_string(w.samples.size()));
  }
  const MelFilterbank fb = mel_filterbank(config);
  const std::size_t n = w.samples.size();
  const std::size_t n_fft = config.n_fft;
  const std::size_t pad = n_fft / 2;
  const std::size_t frames = config.natural_frames();

  std::vector<double> window(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_fft));
  }
  auto sample_at = [&](std::ptrdiff_t idx) -> double {
    const auto len = static_cast<std::ptrdiff_t>(n);
    if (idx < 0) idx = -idx;
    if (idx >= len) idx = 2 * (len - 1) - idx;
    return w.samples[static_cast<std::size_t>(idx)];
  };

  RealFft fft(n_fft);
  std::vector<double> power;
  std::vector<double> mel(frames * config.n_mels, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(t * config.hop) - static_cast<std::ptrdiff_t>(pad);
    double* buf = fft.input();
    for (std::size_t i = 0; i < n_fft; ++i) buf[i] = window[i] * sample_at(start + static_cast<std::ptrdiff_t>(i));
    fft.power(power);
    for (std::size_t m = 0; m < config.n_mels; ++m) {
      const double* row = fb.weights.data() + m * fb.n_bins;
      double acc = 0.0;
      for (std::size_t k = 0; k < fb.n_bins; ++k) acc += row[k] * power[k];
      mel[t * config.n_mels + m] = acc;
    }
  }

  const double ref = *std::max_element(mel.begin(), mel.end());
  const double ref_db = 10.0 * std::log10(std::max(config.amin, ref));
  double top = -std::numeric_limits<double>::infinity();
  for (double& v : mel) {
    v = 10.0 * std::log10(std::max(v, config.amin)) - ref_db;
    top = std::max(top, v);
  }
  const double floor_db = top - config.top_db;

  LogMelSpectrogram out;
  out.frames = config.frames();
  out.bands = config.n_mels;
  out.config_hash = config.fingerprint();
  out.values.resize(out.frames * out.bands);
  const std::size_t offset = (frames - out.frames) / 2;
  for (std::size_t t = 0; t < out.frames; ++t) {
    for (std::size_t m = 0; m < out.bands; ++m) {
      out.values[t * out.bands + m] = static_cast<float>(std::max(mel[(t + offset) * config.n_mels + m], floor_db));
    }
  }
  return out;
}

LogMelSpectrogram extract(const Waveform& w, const SpectrogramConfig& config) {
  Waveform x = w.sample_rate == config.sample_rate ? w : resample(w, config.sample_rate);
  if (x.samples.size() != config.clip_samples) x = peak_crop(x, config.clip_samples);
  return log_mel(x, config);
}

std::vector<float> standardize(std::span<const float> values, double eps) {
  if (values.empty()) return {};
  double mean = 0.0;
  for (const float v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (const float v : values) var += (v - mean) * (v - mean);
  const double scale = 1.0 / (std::sqrt(var / static_cast<double>(values.size())) + eps);
  std::vector<float> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<float>((values[i] - mean) * scale);
  return out;
}

}  // namespace hallu::audio
