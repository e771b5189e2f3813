"""Waveform container, WAV I/O and the SI-SNR metric."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

DEFAULT_SAMPLE_RATE = 44100
SI_SNR_CAP_DB = 100.0


class AudioFormatError(ValueError):
    """Unsupported or malformed audio data."""


class MetricUndefinedError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Multi-channel waveform, stored as a (channels, samples) float64 array."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[0] not in (1, 2):
            raise AudioFormatError(f"expected 1 or 2 channels, got shape {x.shape}")
        if x.shape[1] < 1:
            raise AudioFormatError("channels must hold at least one sample")
        if not np.all(np.isfinite(x)):
            raise AudioFormatError("samples must be finite")
        if self.sample_rate <= 0:
            raise AudioFormatError("sample_rate must be positive")
        x = x.copy()
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)

    @property
    def channel_count(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)

    def __eq__(self, other):
        if not isinstance(other, AudioClip):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(
            self.samples, other.samples
        )


@dataclass(frozen=True, eq=False)
class MonoSignal:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64).reshape(-1).copy()
        if x.size < 1 or not np.all(np.isfinite(x)):
            raise AudioFormatError("mono signal must be non-empty and finite")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)


def load_wav(path) -> AudioClip:
    """Read a PCM-16 or float-32 WAV file.

    PCM-16 values are scaled by 1/32768; float data is taken as-is.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        msg = str(exc).lower()
        if "unknown wave file format" in msg or "unsupported" in msg or "bit depth" in msg:
            raise AudioFormatError(str(exc)) from exc
        raise OSError(f"could not read {path}: {exc}") from exc
    except (EOFError, struct.error) as exc:
        raise OSError(f"truncated WAV file {path}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        x = data.astype(np.float64)
    else:
        raise AudioFormatError(f"unsupported WAV sample type {data.dtype}")
    x = x.T if x.ndim == 2 else x[None, :]
    if x.shape[0] not in (1, 2):
        raise AudioFormatError(f"unsupported channel count {x.shape[0]}")
    return AudioClip(x, int(rate))


def save_wav(clip: AudioClip, path) -> None:
    """Write an IEEE float-32 WAV file; values outside [-1, 1] are kept."""
    data = clip.samples.astype(np.float32).T
    if clip.channel_count == 1:
        data = data[:, 0]
    wavfile.write(Path(path), clip.sample_rate, np.ascontiguousarray(data))


def downmix(clip: AudioClip) -> MonoSignal:
    return MonoSignal(clip.samples.mean(axis=0), clip.sample_rate)


def si_snr(reference: AudioClip, estimate: AudioClip) -> float:
    """Scale-invariant SNR in dB, averaged over channels and capped at +100 dB."""
    if reference.samples.shape != estimate.samples.shape:
        raise ValueError("reference and estimate must have equal shapes")
    if reference.sample_rate != estimate.sample_rate:
        raise ValueError("sample rates differ")
    values = []
    for s, s_hat in zip(reference.samples, estimate.samples):
        energy = np.dot(s, s)
        if energy == 0.0:
            raise MetricUndefinedError("SI-SNR is undefined for a silent reference")
        target = (np.dot(s_hat, s) / energy) * s
        err = s_hat - target
        t2, e2 = np.dot(target, target), np.dot(err, err)
        if e2 < 1e-12 * t2 or t2 == 0.0 and e2 == 0.0:
            values.append(SI_SNR_CAP_DB)
        elif t2 == 0.0:
            values.append(-SI_SNR_CAP_DB)
        else:
            values.append(min(SI_SNR_CAP_DB, 10.0 * np.log10(t2 / e2)))
    return float(np.mean(values))
