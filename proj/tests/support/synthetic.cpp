#include "synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <iterator>
#include <numbers>

#include "hallu/rng.hpp"

namespace hallu::synth {

namespace fs = std::filesystem;

audio::SpectrogramConfig small_spectrogram_config() {
  audio::SpectrogramConfig c;
  c.sample_rate = 16000.0;
  c.n_fft = 512;
  c.hop = 256;
  c.n_mels = 64;
  c.f_max = 8000.0;
  c.clip_samples = 16128;
  c.target_frames = 64;
  return c;
}

audio::Waveform sine(double freq_hz, double sample_rate, std::size_t n, double amplitude, double phase) {
  audio::Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    w.samples[i] = static_cast<float>(
        amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * static_cast<double>(i) / sample_rate + phase));
  }
  return w;
}

void write_tone_corpus(const fs::path& dir, std::size_t n_classes, std::size_t clips_per_class, std::uint64_t seed,
                       const audio::SpectrogramConfig& config) {
  fs::create_directories(dir / "wav");
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  manifest << "path,label\n";
  Rng rng(seed);
  for (std::size_t k = 0; k < n_classes; ++k) {
    const double base = 300.0 * std::pow(1.45, static_cast<double>(k));
    for (std::size_t j = 0; j < clips_per_class; ++j) {
      const double f = base * (1.0 + 0.02 * rng.normal());
      audio::Waveform w = sine(f, config.sample_rate, config.clip_samples, 0.3, rng.uniform(0, 6.28));
      const audio::Waveform h = sine(2.0 * f, config.sample_rate, config.clip_samples, 0.1);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        w.samples[i] += h.samples[i] + static_cast<float>(0.02 * rng.normal());
      }
      const std::string name = "class" + std::to_string(k) + "_" + std::to_string(j) + ".wav";
      audio::write_wav(dir / "wav" / name, w);
      manifest << "wav/" << name << ",tone" << k << '\n';
    }
  }
}

data::DatasetIndex fake_index(std::size_t n_classes, std::size_t per_class) {
  data::DatasetIndex index;
  for (std::size_t k = 0; k < n_classes; ++k) {
    index.class_names.push_back("class" + std::to_string(k));
    for (std::size_t j = 0; j < per_class; ++j) {
      data::ClipEntry e;
      e.clip_id = "c" + std::to_string(k) + "_" + std::to_string(j);
      e.path = e.clip_id + ".wav";
      e.label = index.class_names.back();
      e.class_id = k;
      e.fold = static_cast<int>(j % 5) + 1;
      index.entries.push_back(e);
    }
  }
  return index;
}

namespace {

SyntheticSpectra make_corpus(std::size_t n_classes, std::size_t per_class, std::size_t frames, std::size_t bands,
                             std::size_t split, std::uint64_t seed, bool informative) {
  SyntheticSpectra s;
  s.index = fake_index(n_classes, per_class);
  s.frames = frames;
  s.bands = bands;
  Rng rng(seed);
  // A few class-specific bands in the high region.
  // Distinct bands per pattern, so every clip has the same value statistics
  // and per-clip standardization carries no class information.
  auto distinct = [&](std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> all(hi - lo);
    std::iota(all.begin(), all.end(), lo);
    rng.shuffle(std::span<std::size_t>(all));
    all.resize(std::min<std::size_t>(4, all.size()));
    return all;
  };
  // Classes take consecutive runs of one shuffled band order: disjoint marks
  // whenever the high region is wide enough.
  std::vector<std::size_t> order(bands - split);
  std::iota(order.begin(), order.end(), split);
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t per = std::clamp<std::size_t>(order.size() / n_classes, 1, 4);
  std::vector<std::vector<std::size_t>> marks(n_classes);
  for (std::size_t k = 0; k < n_classes; ++k) {
    for (std::size_t i = 0; i < per; ++i) marks[k].push_back(order[(k * per + i) % order.size()]);
  }
  // Low-band patterns drawn independently of the class.
  std::vector<std::vector<std::size_t>> low_patterns(32);
  for (auto& p : low_patterns) p = distinct(0, split);
  for (const data::ClipEntry& e : s.index.entries) {
    std::vector<float> v(frames * bands);
    for (float& x : v) x = static_cast<float>(rng.normal());
    if (informative) {
      const auto& low = low_patterns[rng.uniform_index(low_patterns.size())];
      for (std::size_t t = 0; t < frames; ++t) {
        for (const std::size_t b : marks[e.class_id]) v[t * bands + b] += 3.0f;
        for (const std::size_t b : low) v[t * bands + b] += 3.0f;
      }
    }
    s.clips.push_back(audio::standardize(v));
  }
  return s;
}

}  // namespace

SyntheticSpectra high_band_corpus(std::size_t n_classes, std::size_t clips_per_class, std::size_t frames,
                                  std::size_t bands, std::size_t split, std::uint64_t seed) {
  return make_corpus(n_classes, clips_per_class, frames, bands, split, seed, true);
}

SyntheticSpectra noise_corpus(std::size_t n_classes, std::size_t clips_per_class, std::size_t frames,
                              std::size_t bands, std::uint64_t seed) {
  return make_corpus(n_classes, clips_per_class, frames, bands, bands / 2, seed, false);
}

fs::path write_tiny_run(const fs::path& dir, const std::string& extra, std::size_t n_classes,
                        std::size_t clips_per_class) {
  fs::create_directories(dir);
  write_tone_corpus(dir / "corpus", n_classes, clips_per_class, 1234);
  const fs::path config = dir / "config.ini";
  std::ofstream out(config, std::ios::trunc);
  out << "[run]\nseed = 7\nthreads = 1\nout = " << (dir / "out").string() << "\n\n"
      << "[data]\nformat = manifest\nroot = " << (dir / "corpus").string() << "\n\n"
      << "[spectrogram]\nsample_rate = 16000\nn_fft = 512\nhop = 256\nn_mels = 64\n"
      << "clip_samples = 16128\ntarget_frames = 64\n\n"
      << "[model]\nchannels = 4, 4, 4\nmask_mode = frequency\nfreq_split = 32\n\n"
      << "[split]\nn_novel = 3\nn_validation = 0\n\n"
      << "[train]\nepochs = 2\nlr = 0.01\nlr_step = 1\nn_way = 3\nk_shot = 1\nn_query = 2\n"
      << "episodes_per_epoch = 3\n\n"
      << "[eval]\ngrid = 3x1, 2x2\nrepetitions = 2\n\n"
      << "[importance]\nn_way = 3\nk_shot = 1\n"
      << extra;
  return config;
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  const std::string sa{std::istreambuf_iterator<char>(fa), {}};
  const std::string sb{std::istreambuf_iterator<char>(fb), {}};
  return sa == sb;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hallu-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace hallu::synth
