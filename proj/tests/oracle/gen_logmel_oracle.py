"""Freezes reference log-mel values from librosa into logmel_oracle.hpp."""
import numpy as np
import librosa

SR, N = 16000, 80000
t = np.arange(N, dtype=np.float64) / SR
x = (0.5 * np.sin(2 * np.pi * 440 * t) + 0.25 * np.sin(2 * np.pi * 3000 * t)) * (0.5 + 0.5 * np.sin(2 * np.pi * 0.7 * t)) \
    + 0.05 * np.sin(2 * np.pi * 6500 * t) \
    + 0.2 * np.sin(2 * np.pi * (50.0 * t + (7900.0 - 50.0) * t * t / 10.0))
y = x.astype(np.float32).astype(np.float64)

S = librosa.feature.melspectrogram(y=y, sr=SR, n_fft=2048, hop_length=502, win_length=2048, window="hann",
                                   center=True, pad_mode="reflect", power=2.0, n_mels=128, fmin=0.0, fmax=8000.0,
                                   htk=False, norm="slaney")
D = librosa.power_to_db(S, ref=np.max, amin=1e-10, top_db=80.0).T  # T x F
fb = librosa.filters.mel(sr=SR, n_fft=2048, n_mels=128, fmin=0.0, fmax=8000.0, htk=False, norm="slaney")

frames = [0, 1, 2, 40, 79, 80, 120, 158, 159]
bands = [0, 1, 5, 13, 20, 27, 40, 64, 77, 100, 120, 127]
with open("logmel_oracle.hpp", "w") as f:
    f.write("#pragma once\n\n// Generated by gen_logmel_oracle.py (librosa %s).\n\n" % librosa.__version__)
    f.write("#include <cstddef>\n\nnamespace hallu::oracle {\n\n")
    f.write("inline constexpr std::size_t kLogMelFrames = %d;\n" % D.shape[0])
    f.write("inline constexpr std::size_t kLogMelBands = %d;\n" % D.shape[1])
    f.write("inline constexpr std::size_t kProbeFrames[] = {%s};\n" % ", ".join(map(str, frames)))
    f.write("inline constexpr std::size_t kProbeBands[] = {%s};\n" % ", ".join(map(str, bands)))
    f.write("// log-mel dB at (kProbeFrames[i], kProbeBands[j]), row-major.\n")
    f.write("inline constexpr double kLogMelProbe[] = {\n")
    for fr in frames:
        f.write("    " + ", ".join("%.9g" % D[fr, b] for b in bands) + ",\n")
    f.write("};\n")
    f.write("// Filterbank row sums and peak weights for the same bands.\n")
    f.write("inline constexpr double kFilterRowSum[] = {%s};\n" % ", ".join("%.12g" % fb[b].sum() for b in bands))
    f.write("inline constexpr double kFilterRowMax[] = {%s};\n" % ", ".join("%.12g" % fb[b].max() for b in bands))
    f.write("inline constexpr std::size_t kFilterRowArgmax[] = {%s};\n" % ", ".join(str(int(fb[b].argmax())) for b in bands))
    f.write("\n}  // namespace hallu::oracle\n")
print(D.shape, D.min(), D.max())
