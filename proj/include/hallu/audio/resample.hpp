#pragma once

#include <cstddef>

#include "hallu/audio/wav.hpp"

namespace hallu::audio {

/// Polyphase windowed-sinc resampler (Kaiser window, beta 14, 64 taps per
/// phase). Output length is round(len * target / source). Equal rates return
/// the input unchanged.
Waveform resample(const Waveform& w, double target_rate);

/// Fixed-length window of `clip_samples` centred on the waveform peak: the
/// highest-energy 25 ms RMS window is located (lowest start on ties) and the
/// crop is centred on its largest-magnitude sample. The window is clamped to
/// the signal; shorter inputs are zero-padded symmetrically.
Waveform peak_crop(const Waveform& w, std::size_t clip_samples);

}  // namespace hallu::audio
