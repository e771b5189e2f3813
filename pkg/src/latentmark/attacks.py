"""Audio attacks with forward passes and matching backward rules.

Every attack maps a ``(channels, samples)`` array to a new array and
returns a small tape object.  ``attack_vjp`` turns an output cotangent
into an input cotangent: the exact adjoint for linear or piecewise-smooth
attacks, identity for straight-through ones (quantizers, codec
surrogates).  Eval-only attacks refuse to run backward.
"""

from __future__ import annotations

import logging
import math
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .audio import AudioClip, load_wav, save_wav
from .transform import TransformConfig, istft, stft

log = logging.getLogger(__name__)

EXACT = "exact"
STRAIGHT_THROUGH = "straight_through"
EVAL_ONLY = "eval_only"

GRAD_MODES = {
    "identity": EXACT,
    "bandpass": EXACT,
    "lowpass": EXACT,
    "highpass": EXACT,
    "smooth": EXACT,
    "duck": EXACT,
    "boost": EXACT,
    "suppress": EXACT,
    "crop": EXACT,
    "echo": EXACT,
    "speed": EXACT,
    "quantize": STRAIGHT_THROUGH,
    "resample": EXACT,
    "codec_surrogate_mp3": STRAIGHT_THROUGH,
    "codec_surrogate_aac": STRAIGHT_THROUGH,
    "noise_gaussian": EXACT,
    "noise_pink": EXACT,
    "regen_surrogate": EVAL_ONLY,
}
ATTACK_KINDS = tuple(GRAD_MODES)
STOCHASTIC_KINDS = frozenset({"suppress", "crop", "noise_gaussian", "noise_pink", "regen_surrogate"})

# evaluation-time parameters
EVAL_PARAMS = {
    "identity": {},
    "bandpass": {"low": 500.0, "high": 5000.0},
    "lowpass": {"cutoff": 500.0},
    "highpass": {"cutoff": 1500.0},
    "smooth": {"window": 40},
    "duck": {"gain": 10.0},
    "boost": {"gain": 0.1},
    "suppress": {"fraction": 0.03},
    "crop": {"keep": 0.5},
    "echo": {"delay": 0.5, "volume": 0.5},
    "speed": {"factor": 1.25},
    "quantize": {"levels": 2**9},
    "resample": {"target_rate": 32000},
    "codec_surrogate_mp3": {"bitrate": 32000.0, "window": 1152},
    "codec_surrogate_aac": {"bitrate": 64000.0, "window": 1024},
    "noise_gaussian": {"sigma": 0.05},
    "noise_pink": {"sigma": 0.1},
    "regen_surrogate": {"levels": 256, "noise_rel": 0.01},
}

FIR_TAPS = 511


class AttackContractError(RuntimeError):
    """Raised when an eval-only attack is used where gradients are needed."""


class AttackParamError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in GRAD_MODES:
            raise AttackParamError(
                f"unknown attack {self.kind!r}; valid: {', '.join(ATTACK_KINDS)}"
            )
        merged = dict(EVAL_PARAMS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise AttackParamError(f"{self.kind} has no parameter(s) {sorted(unknown)}")
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        _validate(self.kind, merged)

    @property
    def grad_mode(self) -> str:
        return GRAD_MODES[self.kind]

    @classmethod
    def evaluation(cls, kind: str) -> "AttackSpec":
        return cls(kind)

    def describe(self) -> str:
        if not self.params:
            return self.kind
        args = ",".join(f"{k}={_fmt(v)}" for k, v in sorted(self.params.items()))
        return f"{self.kind}({args})"

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items()))))


def _fmt(v):
    return f"{v:g}" if isinstance(v, float) else str(v)


def _validate(kind, p):
    def need(cond, msg):
        if not cond:
            raise AttackParamError(f"{kind}: {msg}")

    if kind == "bandpass":
        need(0 < p["low"] < p["high"], "require 0 < low < high")
    elif kind in ("lowpass", "highpass"):
        need(p["cutoff"] > 0, "cutoff must be positive")
    elif kind == "smooth":
        need(int(p["window"]) == p["window"] and p["window"] >= 1, "window must be a positive integer")
    elif kind in ("duck", "boost"):
        need(p["gain"] > 0, "gain must be positive")
    elif kind == "suppress":
        need(0 <= p["fraction"] < 1, "fraction must be in [0, 1)")
    elif kind == "crop":
        need(0 < p["keep"] <= 1, "keep must be in (0, 1]")
    elif kind == "echo":
        need(p["delay"] >= 0 and 0 <= p["volume"] <= 1, "delay >= 0 and volume in [0, 1]")
    elif kind == "speed":
        need(0.25 <= p["factor"] <= 4, "factor must be in [0.25, 4]")
    elif kind == "quantize":
        need(int(p["levels"]) == p["levels"] and p["levels"] >= 2, "levels must be an integer >= 2")
    elif kind == "resample":
        need(p["target_rate"] > 0, "target_rate must be positive")
    elif kind.startswith("codec_surrogate"):
        need(p["bitrate"] > 0, "bitrate must be positive")
        need(int(p["window"]) == p["window"] and p["window"] % 2 == 0, "window must be even")
    elif kind.startswith("noise"):
        need(p["sigma"] >= 0, "sigma must be non-negative")
    elif kind == "regen_surrogate":
        need(p["levels"] >= 2 and p["noise_rel"] >= 0, "levels >= 2, noise_rel >= 0")


# ---------------------------------------------------------------------------
# linear building blocks


def fir_apply(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Length-preserving convolution, centred for odd ``h``."""
    n, L = x.shape[-1], len(h)
    o = (L - 1) // 2
    full = sps.oaconvolve(x, np.broadcast_to(h, (*x.shape[:-1], L)), axes=-1)
    return full[..., o:o + n]


def fir_adjoint(g: np.ndarray, h: np.ndarray) -> np.ndarray:
    n, L = g.shape[-1], len(h)
    o = (L - 1) // 2
    full = sps.oaconvolve(g, np.broadcast_to(h[::-1], (*g.shape[:-1], L)), axes=-1)
    start = L - 1 - o
    return full[..., start:start + n]


@lru_cache(maxsize=64)
def design_fir(kind: str, sample_rate: int, a: float, b: float = 0.0) -> np.ndarray:
    """Hamming-windowed sinc with ``FIR_TAPS`` taps."""
    nyq = sample_rate / 2
    if kind == "lowpass":
        h = sps.firwin(FIR_TAPS, min(a, nyq * 0.999), fs=sample_rate)
    elif kind == "highpass":
        h = sps.firwin(FIR_TAPS, min(a, nyq * 0.999), pass_zero=False, fs=sample_rate)
    elif kind == "bandpass":
        h = sps.firwin(FIR_TAPS, [a, min(b, nyq * 0.999)], pass_zero=False, fs=sample_rate)
    else:
        raise ValueError(kind)
    h.flags.writeable = False
    return h


class Upfirdn:
    """Rational resampler ``y = slice(upfirdn(h, x, up, down))`` with its adjoint."""

    def __init__(self, up: int, down: int, n_in: int):
        self.up, self.down, self.n_in = up, down, n_in
        max_rate = max(up, down)
        half = 10 * max_rate
        h = sps.firwin(2 * half + 1, 1.0 / max_rate, window=("kaiser", 5.0)) * up
        # prepend zeros so the filter delay lands on an output sample
        pre = (-half) % down
        self.h = np.concatenate([np.zeros(pre), h])
        self.offset = (half + pre) // down
        self.n_out = -(-n_in * up // down)
        L = len(self.h)
        # adjoint: correlate, then pick every up-th sample starting at L-1
        self.h_rev = self.h[::-1]
        self.adj_pre = (-(L - 1)) % up
        self.adj_start = (L - 1 + self.adj_pre) // up
        self.h_adj = np.concatenate([np.zeros(self.adj_pre), self.h_rev])

    def forward(self, x: np.ndarray) -> np.ndarray:
        full = sps.upfirdn(self.h, x, self.up, self.down, axis=-1)
        out = full[..., self.offset:self.offset + self.n_out]
        if out.shape[-1] < self.n_out:
            pad = self.n_out - out.shape[-1]
            out = np.concatenate([out, np.zeros((*out.shape[:-1], pad))], axis=-1)
        return out

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        # undo the output slice: cotangent lives at full[offset + j]
        full_len = -(-((self.n_in - 1) * self.up + len(self.h)) // self.down)
        gf = np.zeros((*g.shape[:-1], full_len))
        m = min(self.n_out, full_len - self.offset)
        gf[..., self.offset:self.offset + m] = g[..., :m]
        z = sps.upfirdn(self.h_adj, gf, self.down, self.up, axis=-1)
        out = z[..., self.adj_start:self.adj_start + self.n_in]
        if out.shape[-1] < self.n_in:
            pad = self.n_in - out.shape[-1]
            out = np.concatenate([out, np.zeros((*out.shape[:-1], pad))], axis=-1)
        return out


@lru_cache(maxsize=16)
def _resampler(up: int, down: int, n_in: int) -> Upfirdn:
    return Upfirdn(up, down, n_in)


def _ratio(target: int, source: int) -> tuple[int, int]:
    g = math.gcd(int(target), int(source))
    return int(target) // g, int(source) // g


# ---------------------------------------------------------------------------
# MDCT codec surrogate


@lru_cache(maxsize=8)
def _mdct_basis(window: int):
    M = window // 2
    n = np.arange(window)
    k = np.arange(M)
    w = np.sin(np.pi * (n + 0.5) / window)
    basis = np.cos(np.pi / M * (n[:, None] + 0.5 + M / 2) * (k[None, :] + 0.5))
    analysis = w[:, None] * basis  # (2M, M)
    synthesis = (2.0 / M) * (w[:, None] * basis).T  # (M, 2M)
    return analysis, synthesis


def mdct(x: np.ndarray, window: int) -> np.ndarray:
    """Sine-window MDCT with hop ``window/2``; pads so that TDAC covers every sample."""
    M = window // 2
    n = x.shape[-1]
    total = -(-n // M) * M + 2 * M
    xp = np.zeros((*x.shape[:-1], total))
    xp[..., M:M + n] = x
    frames = np.ascontiguousarray(np.lib.stride_tricks.sliding_window_view(xp, window, axis=-1)[..., ::M, :])
    analysis, _ = _mdct_basis(window)
    return frames @ analysis


def imdct(X: np.ndarray, window: int, n: int) -> np.ndarray:
    M = window // 2
    _, synthesis = _mdct_basis(window)
    frames = X @ synthesis
    n_frames = frames.shape[-2]
    out = np.zeros((*X.shape[:-2], (n_frames + 1) * M))
    out[..., : n_frames * M] += frames[..., :M].reshape(*X.shape[:-2], -1)
    out[..., M:(n_frames + 1) * M] += frames[..., M:].reshape(*X.shape[:-2], -1)
    return out[..., M:M + n]


def _estimated_bits(q: np.ndarray) -> float:
    # magnitude bits plus one sign bit per nonzero coefficient
    a = np.abs(q)
    return float(np.sum(np.log2(1.0 + a)) + np.count_nonzero(a))


def calibrate_step(coeffs: np.ndarray, bits_budget: float, iters: int = 30) -> float:
    """Bisect (in log space) for the uniform step whose estimated cost meets the budget."""
    scale = float(np.max(np.abs(coeffs)))
    if scale == 0.0:
        return 1.0
    lo, hi = np.log(scale * 1e-7), np.log(scale * 4.0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _estimated_bits(np.round(coeffs / np.exp(mid))) > bits_budget:
            lo = mid
        else:
            hi = mid
    return float(np.exp(hi))


def codec_surrogate(x: np.ndarray, sample_rate: int, bitrate: float, window: int) -> np.ndarray:
    coeffs = mdct(x, window)
    budget = bitrate * x.shape[-1] / sample_rate
    step = calibrate_step(coeffs, budget)
    return imdct(np.round(coeffs / step) * step, window, x.shape[-1])


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class AttackTape:
    spec: AttackSpec
    sample_rate: int
    input_shape: tuple
    ctx: dict = field(default_factory=dict)


def pink_noise(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance 1/f noise made by spectrally shaping white noise."""
    n = shape[-1]
    white = rng.standard_normal(shape)
    spec = np.fft.rfft(white, axis=-1)
    f = np.arange(spec.shape[-1], dtype=np.float64)
    shaping = np.zeros_like(f)
    shaping[1:] = 1.0 / np.sqrt(f[1:])
    pink = np.fft.irfft(spec * shaping, n=n, axis=-1)
    std = pink.std(axis=-1, keepdims=True)
    return pink / np.where(std > 0, std, 1.0)


def attack_forward(x: np.ndarray, sample_rate: int, spec: AttackSpec, rng=None):
    """Apply ``spec`` to a (C, n) array; returns ``(y, tape)``."""
    x = np.asarray(x, dtype=np.float64)
    p = spec.params
    kind = spec.kind
    tape = AttackTape(spec, sample_rate, x.shape)
    n = x.shape[-1]
    if kind in STOCHASTIC_KINDS and rng is None:
        raise ValueError(f"{kind} needs an rng")

    if kind == "identity":
        y = x.copy()
    elif kind in ("lowpass", "highpass"):
        h = design_fir(kind, sample_rate, float(p["cutoff"]))
        tape.ctx["h"] = h
        y = fir_apply(x, h)
    elif kind == "bandpass":
        h = design_fir(kind, sample_rate, float(p["low"]), float(p["high"]))
        tape.ctx["h"] = h
        y = fir_apply(x, h)
    elif kind == "smooth":
        h = np.full(int(p["window"]), 1.0 / int(p["window"]))
        tape.ctx["h"] = h
        y = fir_apply(x, h)
    elif kind in ("duck", "boost"):
        y = x * p["gain"]
    elif kind == "suppress":
        count = int(round(p["fraction"] * n))
        idx = rng.choice(n, size=count, replace=False)
        mask = np.ones(n)
        mask[idx] = 0.0
        tape.ctx["mask"] = mask
        y = x * mask
    elif kind == "crop":
        m = max(1, int(round(p["keep"] * n)))
        start = int(rng.integers(0, n - m + 1))
        tape.ctx["start"] = start
        y = x[..., start:start + m].copy()
    elif kind == "echo":
        d = int(round(p["delay"] * sample_rate))
        tape.ctx["lag"] = d
        y = x.copy()
        if d < n:
            y[..., d:] += p["volume"] * x[..., :n - d]
    elif kind == "speed":
        factor = float(p["factor"])
        m = int(math.floor((n - 1) / factor)) + 1
        pos = np.arange(m) * factor
        i0 = np.minimum(np.floor(pos).astype(np.int64), n - 1)
        i1 = np.minimum(i0 + 1, n - 1)
        frac = pos - i0
        tape.ctx.update(i0=i0, i1=i1, frac=frac)
        y = (1.0 - frac) * x[..., i0] + frac * x[..., i1]
    elif kind == "quantize":
        levels = int(p["levels"])
        q = np.clip(np.round((x + 1.0) * (levels - 1) / 2.0), 0, levels - 1)
        y = q * 2.0 / (levels - 1) - 1.0
    elif kind == "resample":
        up, down = _ratio(p["target_rate"], sample_rate)
        there = _resampler(up, down, n)
        back = _resampler(down, up, there.n_out)
        tape.ctx.update(there=there, back=back)
        y = back.forward(there.forward(x))[..., :n]
        if y.shape[-1] < n:
            y = np.concatenate([y, np.zeros((*y.shape[:-1], n - y.shape[-1]))], axis=-1)
    elif kind.startswith("codec_surrogate"):
        y = codec_surrogate(x, sample_rate, float(p["bitrate"]), int(p["window"]))
    elif kind == "noise_gaussian":
        y = x + p["sigma"] * rng.standard_normal(x.shape)
    elif kind == "noise_pink":
        y = x + p["sigma"] * pink_noise(rng, x.shape)
    elif kind == "regen_surrogate":
        y = regen_surrogate(x, rng, int(p["levels"]), float(p["noise_rel"]))
    else:  # pragma: no cover - guarded by AttackSpec
        raise AttackParamError(kind)
    return y, tape


def regen_surrogate(x: np.ndarray, rng, levels: int, noise_rel: float) -> np.ndarray:
    cfg = TransformConfig()
    Z = stft(x, cfg.window_length, cfg.hop)
    planes = np.stack([Z.real, Z.imag])
    rms = float(np.sqrt(np.mean(planes**2)))
    out = np.empty_like(planes)
    for i, plane in enumerate(planes):
        peak = float(np.max(np.abs(plane)))
        if peak == 0.0:
            out[i] = plane
            continue
        step = 2.0 * peak / (levels - 1)
        out[i] = np.round((plane + peak) / step) * step - peak
    out += noise_rel * rms * rng.standard_normal(out.shape)
    return istft(out[0] + 1j * out[1], cfg.window_length, cfg.hop, x.shape[-1])


def attack_vjp(spec: AttackSpec, tape: AttackTape, cotangent: np.ndarray) -> np.ndarray:
    kind = spec.kind
    g = np.asarray(cotangent, dtype=np.float64)
    shape = tape.input_shape
    n = shape[-1]
    mode = spec.grad_mode
    if mode == EVAL_ONLY:
        raise AttackContractError(f"{kind} is evaluation-only and has no backward rule")
    if mode == STRAIGHT_THROUGH:
        return _fit_length(g, n)
    p = spec.params
    if kind in ("identity", "noise_gaussian", "noise_pink"):
        return g.copy()
    if kind in ("lowpass", "highpass", "bandpass", "smooth"):
        return fir_adjoint(g, tape.ctx["h"])
    if kind in ("duck", "boost"):
        return g * p["gain"]
    if kind == "suppress":
        return g * tape.ctx["mask"]
    if kind == "crop":
        out = np.zeros(shape)
        start = tape.ctx["start"]
        out[..., start:start + g.shape[-1]] = g
        return out
    if kind == "echo":
        d = tape.ctx["lag"]
        out = g.copy()
        if d < n:
            out[..., :n - d] += p["volume"] * g[..., d:]
        return out
    if kind == "speed":
        i0, i1, frac = tape.ctx["i0"], tape.ctx["i1"], tape.ctx["frac"]
        flat = g.reshape(-1, g.shape[-1])
        out = np.empty((flat.shape[0], n))
        for c, row in enumerate(flat):
            out[c] = np.bincount(i0, (1.0 - frac) * row, minlength=n)
            out[c] += np.bincount(i1, frac * row, minlength=n)
        return out.reshape(shape)
    if kind == "resample":
        there, back = tape.ctx["there"], tape.ctx["back"]
        gb = np.zeros((*g.shape[:-1], back.n_out))
        m = min(n, back.n_out)
        gb[..., :m] = g[..., :m]
        return there.adjoint(back.adjoint(gb))
    raise AttackParamError(f"no backward rule for {kind}")  # pragma: no cover


def _fit_length(g: np.ndarray, n: int) -> np.ndarray:
    if g.shape[-1] == n:
        return g.copy()
    if g.shape[-1] > n:
        return g[..., :n].copy()
    return np.concatenate([g, np.zeros((*g.shape[:-1], n - g.shape[-1]))], axis=-1)


def apply_attack(clip: AudioClip, spec: AttackSpec, rng=None):
    """Attack a clip; returns ``(attacked clip, tape)`` where the tape feeds ``attack_vjp``."""
    y, tape = attack_forward(clip.samples, clip.sample_rate, spec, rng)
    return AudioClip(y, clip.sample_rate), tape


# ---------------------------------------------------------------------------
# training-time sampling


TRAINING_RANGES = {
    "bandpass": {"low": (300.0, 800.0), "high": (4000.0, 8000.0)},
    "lowpass": {"cutoff": (2000.0, 8000.0)},
    "highpass": {"cutoff": (200.0, 1000.0)},
    "smooth": {"window": ("int", 8, 24)},
    "duck": {"gain": (0.3, 3.0)},
    "boost": {"gain": (0.3, 3.0)},
    "suppress": {"fraction": (0.005, 0.02)},
    "crop": {"keep": (0.70, 0.95)},
    "echo": {"delay": (0.1, 0.3), "volume": (0.1, 0.4)},
    "speed": {"factor": (0.95, 1.1)},
    "quantize": {"levels": ("choice", 2**12, 2**11, 2**10)},
    "resample": {"target_rate": ("choice", 40000, 36000)},
    "codec_surrogate_mp3": {"bitrate": ("choice", 64000.0), "window": ("choice", 1152)},
    "codec_surrogate_aac": {"bitrate": ("choice", 128000.0), "window": ("choice", 1024)},
    "noise_gaussian": {"sigma": (0.001, 0.03)},
    "noise_pink": {"sigma": (0.01, 0.06)},
}
TRAINABLE_KINDS = tuple(TRAINING_RANGES)


def _draw(rng: np.random.Generator, rule):
    if rule[0] == "int":
        return int(rng.integers(rule[1], rule[2] + 1))
    if rule[0] == "choice":
        return rule[1 + int(rng.integers(0, len(rule) - 1))]
    return float(rng.uniform(rule[0], rule[1]))


def in_training_range(spec: AttackSpec) -> bool:
    if spec.kind == "identity":
        return True
    rules = TRAINING_RANGES.get(spec.kind)
    if rules is None:
        return False
    for name, rule in rules.items():
        v = spec.params[name]
        if rule[0] == "int":
            ok = rule[1] <= v <= rule[2]
        elif rule[0] == "choice":
            ok = v in rule[1:]
        else:
            ok = rule[0] <= v <= rule[1]
        if not ok:
            return False
    return True


@dataclass
class AttackSampler:
    """Uniform choice over enabled kinds plus identity, then uniform parameters."""

    kinds: tuple = TRAINABLE_KINDS
    include_identity: bool = True

    def __post_init__(self):
        kinds = tuple(self.kinds)
        bad = [k for k in kinds if k not in TRAINING_RANGES]
        if bad:
            raise AttackParamError(f"not trainable: {bad}")
        if not kinds and not self.include_identity:
            raise AttackParamError("attack sampler has no kinds enabled")
        self.kinds = kinds

    @property
    def choices(self) -> tuple:
        return (("identity",) if self.include_identity else ()) + self.kinds

    def sample(self, rng: np.random.Generator) -> AttackSpec:
        kind = self.choices[int(rng.integers(0, len(self.choices)))]
        if kind == "identity":
            return AttackSpec("identity")
        params = {name: _draw(rng, rule) for name, rule in TRAINING_RANGES[kind].items()}
        return AttackSpec(kind, params)


def sample_training_attack(sampler: AttackSampler, rng: np.random.Generator) -> AttackSpec:
    return sampler.sample(rng)


# ---------------------------------------------------------------------------
# optional real codecs (evaluation only)

EXTERNAL_CODECS = {
    "codec_surrogate_mp3": ("libmp3lame", "mp3"),
    "codec_surrogate_aac": ("aac", "m4a"),
}


def external_codec_command(binary: str, src: Path, dst: Path, codec: str, bitrate: float) -> list:
    return [binary, "-hide_banner", "-loglevel", "error", "-y", "-i", str(src),
            "-c:a", codec, "-b:a", f"{int(round(bitrate / 1000))}k", str(dst)]


def external_codec_roundtrip(clip: AudioClip, spec: AttackSpec, binary: str = "ffmpeg"):
    """Round-trip through a real encoder if ``binary`` is on PATH.

    Returns ``(clip, True)`` on success and ``(None, False)`` when the
    encoder is unavailable or fails, so the caller can fall back to the
    surrogate and annotate the report.
    """
    exe = shutil.which(binary)
    if exe is None or spec.kind not in EXTERNAL_CODECS:
        return None, False
    codec, ext = EXTERNAL_CODECS[spec.kind]
    with tempfile.TemporaryDirectory() as tmp:
        src, enc, dec = Path(tmp, "in.wav"), Path(tmp, f"enc.{ext}"), Path(tmp, "out.wav")
        save_wav(clip, src)
        try:
            subprocess.run(external_codec_command(exe, src, enc, codec, spec.params["bitrate"]),
                           check=True, capture_output=True)
            subprocess.run([exe, "-hide_banner", "-loglevel", "error", "-y", "-i", str(enc),
                            "-c:a", "pcm_f32le", "-ar", str(clip.sample_rate), str(dec)],
                           check=True, capture_output=True)
            out = load_wav(dec)
        except (subprocess.CalledProcessError, OSError, ValueError) as exc:
            log.warning("external codec failed (%s); using surrogate", exc)
            return None, False
    return out, True
