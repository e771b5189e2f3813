"""Seeded music-like test signals (harmonic notes, percussion, noise bed)."""

from __future__ import annotations

import numpy as np

from .attacks import pink_noise
from .audio import AudioClip


def _note(freq, length, sr, rng):
    t = np.arange(length) / sr
    out = np.zeros(length)
    n_harm = int(min(24, (sr * 0.4) // freq))
    rolloff = rng.uniform(0.8, 1.6)
    for h in range(1, n_harm + 1):
        amp = h ** (-rolloff) * rng.uniform(0.6, 1.0)
        out += amp * np.sin(2 * np.pi * freq * h * t + rng.uniform(0, 2 * np.pi))
    attack = min(length, int(0.01 * sr))
    env = np.exp(-t * rng.uniform(0.5, 4.0))
    env[:attack] *= np.linspace(0, 1, attack, endpoint=False)
    return out * env


def music_like(duration: float = 5.0, sample_rate: int = 44100, seed: int = 0,
               channels: int = 2, peak: float = 0.5) -> AudioClip:
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    out = np.zeros((channels, n))
    bpm = rng.uniform(80, 140)
    beat = int(sample_rate * 60 / bpm)
    # melodic / harmonic layer
    pos = 0
    while pos < n:
        length = int(beat * rng.choice([1, 2, 4]))
        for _ in range(rng.integers(1, 4)):
            midi = rng.integers(40, 84)
            freq = 440.0 * 2 ** ((midi - 69) / 12)
            seg = _note(freq, min(length, n - pos), sample_rate, rng)
            pan = rng.uniform(0.2, 0.8)
            gains = [1 - pan, pan] if channels == 2 else [1.0]
            for c in range(channels):
                out[c, pos:pos + len(seg)] += gains[c] * seg
        pos += length
    # percussion: decaying noise bursts on the beat
    for start in range(0, n, beat):
        length = min(int(0.15 * sample_rate), n - start)
        burst = rng.standard_normal(length) * np.exp(-np.arange(length) / (0.03 * sample_rate))
        for c in range(channels):
            out[c, start:start + length] += 0.6 * burst
    out += 0.01 * pink_noise(rng, out.shape)
    out *= peak / np.max(np.abs(out))
    return AudioClip(out, sample_rate)
