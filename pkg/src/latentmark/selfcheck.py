"""Numerical self-checks: transform reconstruction, carrier orthonormality and
finite-difference verification of every differentiable stage."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from . import transform
from .attacks import ATTACK_KINDS, EXACT, GRAD_MODES, AttackSpec
from .features import Payload, SecretKey, derive_carriers
from .grad import (
    attack_stage,
    chain_forward_backward,
    decode_stage,
    fd_check_scalar,
    fd_verify,
    features_stage,
)
from .losses import LossConfig, MultiScaleMelLoss, message_loss
from .synth import music_like

SR = 44100


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value < self.tolerance)


@contextlib.contextmanager
def corrupted_window(scale: float = 1e-3):
    """Test hook: perturb the cached analysis/synthesis window table."""
    original = transform.periodic_hann

    def broken(n):
        w = original(n).copy()
        w[n // 3] += scale
        w.flags.writeable = False
        return w

    transform.periodic_hann = broken
    transform._synthesis_gain.cache_clear()
    try:
        yield
    finally:
        transform.periodic_hann = original
        transform._synthesis_gain.cache_clear()


def _window_checks(cfg: transform.TransformConfig) -> list:
    n = np.arange(cfg.window_length)
    closed_form = 0.5 - 0.5 * np.cos(2 * np.pi * n / cfg.window_length)
    table = transform.periodic_hann(cfg.window_length)
    return [
        CheckResult("window table matches periodic Hann", float(np.max(np.abs(table - closed_form))), 1e-15),
        CheckResult("constant overlap-add", transform.cola_deviation(table, cfg.hop), 1e-12),
    ]


def _transform_checks(cfg: transform.TransformConfig, rng) -> list:
    x = rng.standard_normal((2, SR))
    Z = transform.stft(x, cfg.window_length, cfg.hop)
    y = transform.istft(Z, cfg.window_length, cfg.hop, SR)
    G = rng.standard_normal(Z.shape) + 1j * rng.standard_normal(Z.shape)
    w = rng.standard_normal(x.shape)
    lhs = np.sum(transform.istft(G, cfg.window_length, cfg.hop, SR) * w)
    adj = transform.istft_adjoint(w, cfg.window_length, cfg.hop)
    rhs = np.sum(G.real * adj.real + G.imag * adj.imag)
    return [
        CheckResult("transform round trip (max abs error)", float(np.max(np.abs(y - x))), 1e-6),
        CheckResult("decode adjoint identity", float(abs(lhs - rhs) / abs(lhs)), 1e-9),
    ]


def _carrier_checks() -> list:
    out = []
    for k in (8, 16, 64):
        v = derive_carriers(SecretKey(bytes(range(32))), k, 128).vectors
        out.append(CheckResult(f"carrier Gram identity k={k}", float(np.max(np.abs(v.T @ v - np.eye(k)))), 1e-10))
    return out


def _stage_checks(cfg: transform.TransformConfig, rng) -> list:
    clip = music_like(0.2, seed=3)
    x = clip.samples
    Z = transform.stft(x, cfg.window_length, cfg.hop)
    base = np.stack([Z.real, Z.imag], axis=-1)
    out = []
    decoder = decode_stage(base, cfg.window_length, cfg.hop, clip.num_samples)
    out.append(CheckResult("fd decode", fd_verify(decoder, 0.01 * rng.standard_normal(base.shape), step=1.0).max_relative_error, 1e-9))
    for kind in ATTACK_KINDS:
        if GRAD_MODES[kind] != EXACT:
            continue
        report = fd_verify(attack_stage(AttackSpec(kind), SR, 5), x)
        out.append(CheckResult(f"fd attack:{kind}", report.max_relative_error, 1e-5))
    out.append(CheckResult("fd features", fd_verify(features_stage(SR), x).max_relative_error, 1e-5))

    bank = derive_carriers(SecretKey(bytes(range(32))), 16)
    payload = Payload.random(16, np.random.default_rng(0))
    phi = 4 * rng.standard_normal(128)
    _, g = message_loss(phi, bank, payload)
    err = fd_check_scalar(lambda v: message_loss(v, bank, payload)[0], g, phi)
    out.append(CheckResult("fd message loss", err, 1e-5))

    loss_cfg = LossConfig()
    perc = MultiScaleMelLoss(x, SR, loss_cfg)
    cand = x + 0.3 * rng.standard_normal(x.shape)
    _, g = perc(cand)
    err = fd_check_scalar(lambda c: perc(c, need_grad=False)[0], g, cand)
    out.append(CheckResult("fd perceptual loss", err, 1e-5))

    def composed(delta):
        def head(a_w):
            lp, gp = perc(a_w)
            lm, gm = chain_forward_backward(
                [attack_stage(AttackSpec("identity"), SR), features_stage(SR)], a_w,
                lambda v: message_loss(v, bank, payload, loss_cfg.margin),
            )
            return (loss_cfg.lambda_m * lm + loss_cfg.lambda_p * lp,
                    loss_cfg.lambda_m * gm + loss_cfg.lambda_p * gp)
        return chain_forward_backward([decoder], delta, head)

    delta = rng.standard_normal(base.shape)
    _, g = composed(delta)
    out.append(CheckResult("fd composed embed chain", fd_check_scalar(lambda d: composed(d)[0], g, delta), 1e-4))
    return out


def run_selfcheck(cfg: transform.TransformConfig = transform.TransformConfig(), seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return (_window_checks(cfg) + _transform_checks(cfg, rng) + _carrier_checks()
            + _stage_checks(cfg, rng))


def render(results) -> str:
    width = max(len(r.name) for r in results) + 2
    lines = [f"{'check'.ljust(width)}{'value':>12}{'tol':>10}  result"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}{r.value:12.3e}{r.tolerance:10.0e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
