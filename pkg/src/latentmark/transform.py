"""Invertible STFT latent with exact adjoints.

The analysis side frames a reflection-padded signal with a periodic Hann
window and takes a real FFT of every frame.  Synthesis is windowed
overlap-add divided by the summed squared window, which makes
``decode(encode(x)) == x`` up to rounding.  Every operator here is linear,
so each VJP is simply the adjoint operator.

Arrays are shaped ``(channels, samples)`` in the time domain and
``(channels, frames, bins)`` complex in the latent domain.  ``LatentGrid``
stores the latter as split real/imaginary planes for the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sp_fft

from .audio import AudioClip


class TooShortError(ValueError):
    """Signal is shorter than a single analysis frame."""


class ShapeError(ValueError):
    pass


@lru_cache(maxsize=32)
def periodic_hann(n: int) -> np.ndarray:
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    w.flags.writeable = False
    return w


@dataclass(frozen=True)
class TransformConfig:
    window_length: int = 1024
    hop: int = 256

    def __post_init__(self):
        if self.window_length % self.hop or self.window_length // self.hop != 4:
            raise ValueError("window_length must be exactly 4 hops (75% overlap)")

    @property
    def window(self) -> np.ndarray:
        return periodic_hann(self.window_length)

    @property
    def bins(self) -> int:
        return self.window_length // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        padded = num_samples + 2 * (self.window_length // 2)
        return (padded - self.window_length) // self.hop + 1


def cola_deviation(window: np.ndarray, hop: int) -> float:
    """Max deviation of the summed squared shifted windows from its mean."""
    n = len(window)
    acc = np.zeros(hop)
    for start in range(0, n, hop):
        acc += window[start:start + hop] ** 2
    return float(np.max(np.abs(acc - acc.mean())))


# ---------------------------------------------------------------------------
# array primitives


def min_length(window_length: int) -> int:
    # reflection padding of W/2 needs strictly more than W/2 samples
    return window_length // 2 + 1


def reflect_pad(x: np.ndarray, pad: int) -> np.ndarray:
    if x.shape[-1] <= pad:
        raise TooShortError(f"need more than {pad} samples, got {x.shape[-1]}")
    return np.pad(x, [(0, 0)] * (x.ndim - 1) + [(pad, pad)], mode="reflect")


def reflect_pad_adjoint(g: np.ndarray, pad: int) -> np.ndarray:
    n = g.shape[-1] - 2 * pad
    out = g[..., pad:pad + n].copy()
    out[..., 1:pad + 1] += g[..., :pad][..., ::-1]
    out[..., n - pad - 1:n - 1] += g[..., pad + n:][..., ::-1]
    return out


def frame(x: np.ndarray, length: int, hop: int) -> np.ndarray:
    """View ``(..., n)`` as ``(..., frames, length)``."""
    return sliding_window_view(x, length, axis=-1)[..., ::hop, :]


def overlap_add(frames: np.ndarray, hop: int, total: int) -> np.ndarray:
    """Adjoint of :func:`frame`; ``length`` must be a multiple of ``hop``."""
    *lead, n_frames, length = frames.shape
    r = length // hop
    blocks = np.zeros((*lead, n_frames + r - 1, hop))
    for j in range(r):
        blocks[..., j:j + n_frames, :] += frames[..., j * hop:(j + 1) * hop]
    out = blocks.reshape(*lead, -1)
    if out.shape[-1] >= total:
        return out[..., :total]
    return np.concatenate([out, np.zeros((*lead, total - out.shape[-1]))], axis=-1)


def _half_spectrum_weights(n: int) -> np.ndarray:
    c = np.full(n // 2 + 1, 2.0)
    c[0] = 1.0
    if n % 2 == 0:
        c[-1] = 1.0
    return c


def irfft_adjoint(g: np.ndarray, n: int) -> np.ndarray:
    """Adjoint of ``irfft(., n)`` seen as a map from (Re, Im) planes to reals."""
    return sp_fft.rfft(g, n=n, axis=-1) * (_half_spectrum_weights(n) / n)


def rfft_adjoint(G: np.ndarray, n: int) -> np.ndarray:
    """Adjoint of ``rfft(., n)`` with the complex cotangent ``dRe + i dIm``."""
    scaled = G / _half_spectrum_weights(n)
    return sp_fft.irfft(scaled, n=n, axis=-1) * n


def stft(x: np.ndarray, window_length: int, hop: int) -> np.ndarray:
    w = periodic_hann(window_length)
    xp = reflect_pad(x, window_length // 2)
    return sp_fft.rfft(frame(xp, window_length, hop) * w, axis=-1, overwrite_x=True)


def power(spec: np.ndarray) -> np.ndarray:
    """``|spec|**2`` without complex temporaries."""
    planes = spec.view(np.float64).reshape(*spec.shape, 2)
    return np.einsum("...i,...i->...", planes, planes)


def power_vjp(spec: np.ndarray, power_bar: np.ndarray, window_length: int, hop: int,
              num_samples: int, inplace: bool = False) -> np.ndarray:
    """Signal cotangent of ``power(stft(x))`` given ``power_bar``.

    Equivalent to ``stft_adjoint(2 * spec * power_bar)`` with the constant
    factors folded into one real multiply.  ``inplace`` lets the caller
    donate both ``spec`` and ``power_bar`` as scratch space.
    """
    n = window_length
    factor = (2.0 * n) / _half_spectrum_weights(n)
    if inplace:
        power_bar *= factor
        spec *= power_bar
        scaled = spec
    else:
        scaled = spec * (power_bar * factor)
    frames_bar = sp_fft.irfft(scaled, n=n, axis=-1, overwrite_x=True)
    frames_bar *= periodic_hann(n)
    pad = n // 2
    padded = overlap_add(frames_bar, hop, num_samples + 2 * pad)
    return reflect_pad_adjoint(padded, pad)


def stft_adjoint(G: np.ndarray, window_length: int, hop: int, num_samples: int) -> np.ndarray:
    w = periodic_hann(window_length)
    pad = window_length // 2
    frames_bar = rfft_adjoint(G, window_length) * w
    padded = overlap_add(frames_bar, hop, num_samples + 2 * pad)
    return reflect_pad_adjoint(padded, pad)


@lru_cache(maxsize=64)
def _synthesis_gain(window_length: int, hop: int, num_samples: int) -> np.ndarray:
    """Reciprocal of the summed squared window over the kept output region."""
    w = periodic_hann(window_length)
    pad = window_length // 2
    n_frames = (num_samples + 2 * pad - window_length) // hop + 1
    wsq = np.broadcast_to(w**2, (n_frames, window_length))
    den = overlap_add(wsq, hop, num_samples + 2 * pad)[pad:pad + num_samples]
    if np.any(den <= 0):
        raise TooShortError("synthesis window does not cover the output")
    gain = 1.0 / den
    gain.flags.writeable = False
    return gain


def istft(Z: np.ndarray, window_length: int, hop: int, num_samples: int) -> np.ndarray:
    n_frames = Z.shape[-2]
    expected = (num_samples + 2 * (window_length // 2) - window_length) // hop + 1
    if n_frames != expected or Z.shape[-1] != window_length // 2 + 1:
        raise ShapeError(
            f"latent of shape {Z.shape[-2:]} does not match {num_samples} samples"
        )
    w = periodic_hann(window_length)
    pad = window_length // 2
    frames = sp_fft.irfft(Z, n=window_length, axis=-1) * w
    y = overlap_add(frames, hop, num_samples + 2 * pad)[..., pad:pad + num_samples]
    return y * _synthesis_gain(window_length, hop, num_samples)


def istft_adjoint(g: np.ndarray, window_length: int, hop: int) -> np.ndarray:
    num_samples = g.shape[-1]
    w = periodic_hann(window_length)
    pad = window_length // 2
    scaled = g * _synthesis_gain(window_length, hop, num_samples)
    padded = np.zeros((*g.shape[:-1], num_samples + 2 * pad))
    padded[..., pad:pad + num_samples] = scaled
    frames = frame(padded, window_length, hop) * w
    return irfft_adjoint(frames, window_length)


# ---------------------------------------------------------------------------
# latent grid


@dataclass(frozen=True, eq=False)
class LatentGrid:
    """Complex STFT latent stored as real planes of shape (C, frames, bins, 2)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 4 or v.shape[-1] != 2:
            raise ShapeError(f"latent planes must be (C, F, B, 2), got {v.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_complex(cls, Z: np.ndarray) -> "LatentGrid":
        return cls(np.stack([Z.real, Z.imag], axis=-1))

    def to_complex(self) -> np.ndarray:
        return self.values.view(np.complex128)[..., 0]

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]

    @property
    def bins(self) -> int:
        return self.values.shape[2]

    def __add__(self, other: "LatentGrid") -> "LatentGrid":
        return LatentGrid(self.values + other.values)

    def zeros_like(self) -> "LatentGrid":
        return LatentGrid(np.zeros_like(self.values))


def encode(clip: AudioClip, cfg: TransformConfig = TransformConfig()) -> LatentGrid:
    return LatentGrid.from_complex(stft(clip.samples, cfg.window_length, cfg.hop))


def decode(
    latent: LatentGrid,
    cfg: TransformConfig = TransformConfig(),
    output_length: int | None = None,
    sample_rate: int = 44100,
) -> AudioClip:
    if output_length is None:
        output_length = (latent.frames - 1) * cfg.hop
    y = istft(latent.to_complex(), cfg.window_length, cfg.hop, output_length)
    return AudioClip(y, sample_rate)


def decode_vjp(cotangent, cfg: TransformConfig = TransformConfig()) -> LatentGrid:
    g = cotangent.samples if isinstance(cotangent, AudioClip) else np.asarray(cotangent)
    if g.ndim == 1:
        g = g[None, :]
    return LatentGrid.from_complex(istft_adjoint(g, cfg.window_length, cfg.hop))
