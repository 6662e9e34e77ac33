"""From raw waveform to the acoustic features the encoder consumes.

Synthesizes a rising three-tone signal, walks it through windowed DFT
magnitudes, the triangular filter bank, log compression, temporal striding
and min/max normalization, and draws the result as a terminal heatmap.

Run with:  python3 demos/03_mel_front_end.py
"""

import numpy as np

from tbje.features import (MelConfig, hz_to_mel, mel_filter_bank,
                           mel_spectrogram, mel_to_hz, normalize_mel,
                           stft_magnitudes)

CFG = MelConfig(sample_rate=8000, n_fft=512, hop=64, window=256, bands=20,
                stride=4)

# ---------------------------------------------------------------------------
# the mel scale packs resolution where hearing has it
# ---------------------------------------------------------------------------

print("=== mel scale ===")
for hz in (100, 500, 1000, 2000, 4000):
    print(f"  {hz:5d} Hz -> {hz_to_mel(hz):7.1f} mel")

edges = mel_to_hz(np.linspace(0.0, hz_to_mel(CFG.sample_rate / 2),
                              CFG.bands + 2))
print(f"\nband centers run {edges[1]:.0f} Hz .. {edges[-2]:.0f} Hz; "
      f"spacing grows {edges[2] - edges[1]:.0f} Hz -> "
      f"{edges[-2] - edges[-3]:.0f} Hz")

bank = mel_filter_bank(CFG)
print("filter bank", bank.shape, " rows sum to",
      np.round(bank.sum(axis=1)[:4], 2), "...")

# ---------------------------------------------------------------------------
# a signal that steps through three tones
# ---------------------------------------------------------------------------

third = CFG.sample_rate // 2            # half a second per tone
t = np.arange(third) / CFG.sample_rate
wave = np.concatenate([np.sin(2 * np.pi * f * t) for f in (300, 900, 2600)])
print(f"\nwaveform: {wave.size} samples, tones at 300 / 900 / 2600 Hz")

spectra = stft_magnitudes(wave, CFG)
print("windowed DFT magnitudes:", spectra.shape, "(frames, bins)")

frames = mel_spectrogram(wave, CFG)
print(f"log-mel, every {CFG.stride}th frame kept:", frames.shape,
      "(rows, bands)")

# ---------------------------------------------------------------------------
# normalize against the observed range, as training data would be
# ---------------------------------------------------------------------------

lo, hi = frames.min(), frames.max()
norm = normalize_mel(frames, lo=lo, hi=hi)

print("\n=== normalized log-mel heatmap (time ->, low band at bottom) ===")
shades = " .:-=+*#%@"
for band in reversed(range(CFG.bands)):
    row = "".join(shades[min(int(v * len(shades)), len(shades) - 1)]
                  for v in norm[:, band])
    print(f"band {band:2d} |{row}|")
print("\neach tone lights a different band; higher tones land higher up")
