#include "hallu/audio/resample.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace hallu::audio {

namespace {

constexpr double kKaiserBeta = 14.0;
constexpr std::ptrdiff_t kTaps = 64;
constexpr std::ptrdiff_t kHalf = kTaps / 2;
// Cutoff relative to the lower of the two Nyquist frequencies.
constexpr double kRolloff = 0.945;

double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace

Waveform resample(const Waveform& w, double target_rate) {
  if (!(target_rate > 0.0)) throw std::invalid_argument("resample: target_rate must be positive");
  if (!(w.sample_rate > 0.0)) throw std::invalid_argument("resample: source sample_rate must be positive");
  if (target_rate == w.sample_rate) return w;

  const auto src = static_cast<std::int64_t>(std::llround(w.sample_rate));
  const auto dst = static_cast<std::int64_t>(std::llround(target_rate));
  if (static_cast<double>(src) != w.sample_rate || static_cast<double>(dst) != target_rate) {
    throw std::invalid_argument("resample: rates must be whole Hz");
  }
  const std::int64_t g = std::gcd(src, dst);
  const std::int64_t up = dst / g;    // L
  const std::int64_t down = src / g;  // M

  // Input time of output n is n * M / L; its fractional part is phase / L.
  const double cutoff = kRolloff * std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
  const double i0_beta = bessel_i0(kKaiserBeta);
  std::vector<double> table(static_cast<std::size_t>(up * kTaps));
  for (std::int64_t phase = 0; phase < up; ++phase) {
    const double frac = static_cast<double>(phase) / static_cast<double>(up);
    double sum = 0.0;
    for (std::ptrdiff_t j = 0; j < kTaps; ++j) {
      // tap j multiplies input sample floor(t) - kHalf + 1 + j
      const double tau = frac + static_cast<double>(kHalf - 1 - j);
      const double r = tau / static_cast<double>(kHalf);
      const double window = std::abs(r) >= 1.0 ? 0.0 : bessel_i0(kKaiserBeta * std::sqrt(1.0 - r * r)) / i0_beta;
      const double h = cutoff * sinc(cutoff * tau) * window;
      table[static_cast<std::size_t>(phase * kTaps + j)] = h;
      sum += h;
    }
    for (std::ptrdiff_t j = 0; j < kTaps; ++j) table[static_cast<std::size_t>(phase * kTaps + j)] /= sum;
  }

  const auto in_len = static_cast<std::int64_t>(w.samples.size());
  const auto out_len = static_cast<std::int64_t>(std::llround(static_cast<double>(in_len) * up / down));
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(out_len));
  for (std::int64_t n = 0; n < out_len; ++n) {
    const std::int64_t pos = n * down;
    const std::int64_t base = pos / up;
    const std::int64_t phase = pos % up;
    const double* h = table.data() + phase * kTaps;
    double acc = 0.0;
    const std::int64_t first = base - kHalf + 1;
    for (std::ptrdiff_t j = 0; j < kTaps; ++j) {
      const std::int64_t k = first + j;
      if (k < 0 || k >= in_len) continue;
      acc += h[j] * w.samples[static_cast<std::size_t>(k)];
    }
    out.samples[static_cast<std::size_t>(n)] = static_cast<float>(acc);
  }
  return out;
}

Waveform peak_crop(const Waveform& w, std::size_t clip_samples) {
  if (clip_samples == 0) throw std::invalid_argument("peak_crop: clip_samples must be positive");
  const std::size_t n = w.samples.size();
  Waveform out;
  out.sample_rate = w.sample_rate;
  if (n == clip_samples) return w;
  if (n < clip_samples) {
    out.samples.assign(clip_samples, 0.0f);
    const std::size_t left = (clip_samples - n) / 2;
    std::copy(w.samples.begin(), w.samples.end(), out.samples.begin() + static_cast<std::ptrdiff_t>(left));
    return out;
  }

  const std::size_t win = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(0.025 * (w.sample_rate > 0 ? w.sample_rate : 16000.0))), 1, n);
  // Sliding sum of squares; integer-free running sum recomputed exactly in double.
  double energy = 0.0;
  for (std::size_t i = 0; i < win; ++i) energy += static_cast<double>(w.samples[i]) * w.samples[i];
  double best_energy = energy;
  std::size_t best_start = 0;
  for (std::size_t s = 1; s + win <= n; ++s) {
    const double in = w.samples[s + win - 1], outgoing = w.samples[s - 1];
    energy += in * in - outgoing * outgoing;
    if (energy > best_energy * (1.0 + 1e-12) + 1e-300) {
      // Re-sum to avoid drift deciding ties.
      double exact = 0.0;
      for (std::size_t i = s; i < s + win; ++i) exact += static_cast<double>(w.samples[i]) * w.samples[i];
      energy = exact;
      if (exact > best_energy) {
        best_energy = exact;
        best_start = s;
      }
    }
  }
  std::size_t center = best_start;
  float peak = -1.0f;
  for (std::size_t i = best_start; i < best_start + win; ++i) {
    const float a = std::abs(w.samples[i]);
    if (a > peak) {
      peak = a;
      center = i;
    }
  }
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(clip_samples / 2);
  std::ptrdiff_t start = static_cast<std::ptrdiff_t>(center) - half;
  start = std::clamp<std::ptrdiff_t>(start, 0, static_cast<std::ptrdiff_t>(n - clip_samples));
  out.samples.assign(w.samples.begin() + start, w.samples.begin() + start + static_cast<std::ptrdiff_t>(clip_samples));
  return out;
}

}  // namespace hallu::audio
