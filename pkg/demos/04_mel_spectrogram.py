#!/usr/bin/env python3
"""From waveform to encoder input: log-mel spectrograms of pure tones.

Each character of the synthetic corpus is a fixed 100 ms tone, so its
spectrogram is a staircase of constant frames whose hot mel bin identifies
the character. This is the structure the encoder learns to read.
"""

import numpy as np

from s2t_longformer.audio import (
    SAMPLE_RATE,
    log_mel,
    mel_filterbank,
    n_frames_for,
    synthesize_text,
    tone_frequency,
)

alphabet = "abcdefgh"

print("=== tone frequencies per character ===")
for i, c in enumerate(alphabet):
    print(f"  {c!r}: {tone_frequency(i):6.0f} Hz")

print("\n=== frame arithmetic: 25 ms window, 10 ms hop ===")
for ms in (100, 200, 1000):
    samples = SAMPLE_RATE * ms // 1000
    print(f"  {ms:5d} ms audio -> {n_frames_for(samples):4d} frames")

text = "cafe"
audio = synthesize_text(text, alphabet)
spec = log_mel(audio)
print(f"\n=== spectrogram of {text!r}: {spec.n_frames} frames x {spec.frames.shape[1]} mel bins ===")

hot = spec.frames.argmax(axis=1)
print("hot mel bin per frame (one plateau per 100 ms character):")
print(" ", " ".join(f"{b:2d}" for b in hot))

fb = mel_filterbank()
print("\npredicted hot bin per character (filterbank geometry, +/-1 from window leakage):")
for c in text:
    freq = tone_frequency(alphabet.index(c))
    k = int(round(freq / (SAMPLE_RATE / 512)))
    print(f"  {c!r} at {freq:4.0f} Hz -> mel bin {fb[:, k].argmax()}")

silence = log_mel(np.zeros(SAMPLE_RATE, dtype=np.int16))
print(f"\nsilence maps to the log floor everywhere: "
      f"min={silence.frames.min():.3f}, max={silence.frames.max():.3f} (= ln 1e-10)")
