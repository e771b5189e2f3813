"""Secret carriers, the log-Mel embedding and sign-projection detection."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio import AudioClip
from .transform import TooShortError, min_length, power, power_vjp, stft

EMBED_DIM = 128
ZERO_PROJECTION_RTOL = 1e-12
PUBLIC_PROJECTION_SEED = 0x5EED_0F_F0  # public, key-independent


class CapacityError(ValueError):
    pass


class FeatureExtractionError(ValueError):
    """Audio too short (or otherwise unusable) for feature extraction."""


class ProtocolError(ValueError):
    pass


def _philox(material: bytes) -> np.random.Generator:
    """Counter-based generator keyed by the first 16 bytes of SHA-256(material).

    The 128-bit Philox key is read little-endian so the stream does not
    depend on platform byte order.
    """
    digest = hashlib.sha256(material).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SecretKey:
    seed: bytes

    @classmethod
    def from_hex(cls, text: str) -> "SecretKey":
        text = text.strip()
        if len(text) != 64:
            raise ValueError("secret key must be 64 hex characters")
        try:
            return cls(bytes.fromhex(text))
        except ValueError as exc:
            raise ValueError(f"secret key is not valid hex: {exc}") from None

    @classmethod
    def random(cls, rng: np.random.Generator) -> "SecretKey":
        return cls(rng.bytes(32))

    def hex(self) -> str:
        return self.seed.hex()


@dataclass(frozen=True, eq=False)
class CarrierBank:
    """Columns of ``vectors`` (d x k) are the orthonormal carriers."""

    vectors: np.ndarray

    @property
    def k(self) -> int:
        return self.vectors.shape[1]

    @property
    def d(self) -> int:
        return self.vectors.shape[0]

    def __eq__(self, other):
        return isinstance(other, CarrierBank) and np.array_equal(self.vectors, other.vectors)


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(a)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs


def derive_carriers(key: SecretKey, k: int, d: int = EMBED_DIM) -> CarrierBank:
    if not 1 <= k <= d:
        raise CapacityError(f"cannot fit {k} carriers in {d} dimensions")
    vectors = _orthonormal_columns(_philox(b"carriers:" + key.seed), d, k)
    vectors.flags.writeable = False
    return CarrierBank(vectors)


@dataclass(frozen=True)
class Payload:
    bits: tuple

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if not bits or any(b not in (-1, 1) for b in bits):
            raise ValueError("payload bits must be a non-empty sequence of +1/-1")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_bitstring(cls, text: str) -> "Payload":
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise ValueError("payload must be a non-empty string of 0/1 characters")
        return cls(tuple(1 if c == "1" else -1 for c in text))

    @classmethod
    def random(cls, k: int, rng: np.random.Generator) -> "Payload":
        return cls(tuple(rng.choice([-1, 1], size=k)))

    def to_bitstring(self) -> str:
        return "".join("1" if b > 0 else "0" for b in self.bits)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.bits, dtype=np.float64)

    def __len__(self):
        return len(self.bits)


# ---------------------------------------------------------------------------
# log-Mel embedding


@dataclass(frozen=True)
class MelConfig:
    mel_bands: int = 64
    fmin: float = 20.0
    fmax: float = 20000.0
    log_floor: float = 1e-8
    window_length: int = 1024
    hop: int = 256

    def validate(self, sample_rate: int) -> None:
        if not 0 <= self.fmin < self.fmax <= sample_rate / 2:
            raise ValueError(f"need 0 <= fmin < fmax <= {sample_rate / 2}")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=32)
def mel_filterbank(
    n_mels: int, n_fft: int, sample_rate: int, fmin: float, fmax: float
) -> np.ndarray:
    """Unit-peak triangular filters on the HTK mel scale, shape (n_mels, bins)."""
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.clip(np.minimum(rising, falling), 0.0, None)
    fb.flags.writeable = False
    return fb


@lru_cache(maxsize=8)
def projection_matrix(d: int, n_mels: int, seed: int = PUBLIC_PROJECTION_SEED) -> np.ndarray:
    """Public d x n_mels map with orthonormal columns (rows cannot be when d > n_mels)."""
    rows, cols = max(d, n_mels), min(d, n_mels)
    q = _orthonormal_columns(_philox(b"projection:" + seed.to_bytes(8, "little")), rows, cols)
    p = q if d >= n_mels else q.T
    p.flags.writeable = False
    return p


@dataclass
class _FeatureTape:
    spec: np.ndarray
    mel_power: np.ndarray
    fb: np.ndarray
    proj: np.ndarray
    channels: int
    num_samples: int
    mel: MelConfig


def features_forward(
    x: np.ndarray, sample_rate: int, mel: MelConfig = MelConfig(), d: int = EMBED_DIM
) -> tuple[np.ndarray, _FeatureTape]:
    """phi(x) = P @ mean_t log(melPower(downmix(x)) + floor)."""
    if x.shape[-1] < min_length(mel.window_length):
        raise FeatureExtractionError(
            f"clip of {x.shape[-1]} samples is shorter than one analysis frame"
        )
    mel.validate(sample_rate)
    mono = x.mean(axis=0)
    try:
        spec = stft(mono, mel.window_length, mel.hop)
    except TooShortError as exc:
        raise FeatureExtractionError(str(exc)) from exc
    fb = mel_filterbank(mel.mel_bands, mel.window_length, sample_rate, mel.fmin, mel.fmax)
    mel_power = power(spec) @ fb.T
    summary = np.log(mel_power + mel.log_floor).mean(axis=0)
    proj = projection_matrix(d, mel.mel_bands)
    tape = _FeatureTape(spec, mel_power, fb, proj, x.shape[0], x.shape[-1], mel)
    return proj @ summary, tape


def features_vjp(tape: _FeatureTape, cotangent: np.ndarray) -> np.ndarray:
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if cotangent.shape != (tape.proj.shape[0],):
        raise ValueError(f"cotangent must have shape ({tape.proj.shape[0]},)")
    summary_bar = tape.proj.T @ cotangent
    n_frames = tape.mel_power.shape[0]
    mel_bar = summary_bar / (n_frames * (tape.mel_power + tape.mel.log_floor))
    mono_bar = power_vjp(tape.spec, mel_bar @ tape.fb, tape.mel.window_length, tape.mel.hop,
                         tape.num_samples)
    return np.broadcast_to(mono_bar / tape.channels, (tape.channels, tape.num_samples)).copy()


def extract_features(clip: AudioClip, mel: MelConfig = MelConfig(), d: int = EMBED_DIM) -> np.ndarray:
    return features_forward(clip.samples, clip.sample_rate, mel, d)[0]


def extract_features_vjp(
    clip: AudioClip, cotangent: np.ndarray, mel: MelConfig = MelConfig(), d: int = EMBED_DIM
) -> np.ndarray:
    _, tape = features_forward(clip.samples, clip.sample_rate, mel, d)
    return features_vjp(tape, cotangent)


# ---------------------------------------------------------------------------
# detection


def signs(values: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) = +1."""
    return np.where(np.asarray(values) >= 0, 1, -1)


def decode_bits(features: np.ndarray, bank: CarrierBank) -> Payload:
    """Sign of each carrier projection.

    Projections within rounding error of zero (relative to the feature
    norm) count as exact zeros and therefore decode to +1.
    """
    proj = features @ bank.vectors
    proj[np.abs(proj) <= ZERO_PROJECTION_RTOL * np.linalg.norm(features)] = 0.0
    return Payload(tuple(signs(proj)))


def detect_payload(clip: AudioClip, bank: CarrierBank, mel: MelConfig = MelConfig()) -> Payload:
    return decode_bits(extract_features(clip, mel, bank.d), bank)


def ber(truth: Payload, decoded: Payload | None) -> float:
    """Fraction of wrong bits; ``None`` marks a failed decode and scores 0.5."""
    if decoded is None:
        return 0.5
    if len(truth) != len(decoded):
        raise ProtocolError(f"payload lengths differ: {len(truth)} vs {len(decoded)}")
    a, b = truth.as_array(), decoded.as_array()
    return float(np.mean(a != b))
