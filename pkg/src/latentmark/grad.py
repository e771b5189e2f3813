"""Stage chaining, finite-difference verification and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .attacks import EXACT, STRAIGHT_THROUGH, AttackSpec, attack_forward, attack_vjp
from .features import EMBED_DIM, MelConfig, features_forward, features_vjp
from .transform import istft, istft_adjoint


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Stage:
    """A differentiable step: ``forward(x) -> (y, state)``, ``vjp(state, g_y) -> g_x``."""

    name: str
    forward: Callable[[np.ndarray], tuple[np.ndarray, Any]]
    vjp: Callable[[Any, np.ndarray], np.ndarray]
    grad_mode: str = EXACT


def chain_forward_backward(stages, leaf: np.ndarray, loss_head):
    """Run ``stages`` on ``leaf``, apply ``loss_head`` and sweep VJPs back.

    ``loss_head(y) -> (loss, g_y)``.  Returns ``(loss, gradient w.r.t. leaf)``.
    """
    value = np.asarray(leaf, dtype=np.float64)
    tapes = []
    for stage in stages:
        out, state = stage.forward(value)
        tapes.append((stage, state, value.shape))
        value = out
    loss, grad = loss_head(value)
    for stage, state, in_shape in reversed(tapes):
        grad = stage.vjp(state, grad)
        if grad.shape != in_shape:
            raise ValueError(
                f"stage {stage.name!r} returned cotangent {grad.shape}, expected {in_shape}"
            )
    return loss, grad


# ---------------------------------------------------------------------------
# stage builders


def decode_stage(base: np.ndarray, window_length: int, hop: int, num_samples: int) -> Stage:
    """Latent perturbation (real planes) -> waveform of ``decode(base + delta)``."""
    base = np.asarray(base, dtype=np.float64)

    def forward(delta):
        z = (base + delta).view(np.complex128)[..., 0]
        return istft(z, window_length, hop, num_samples), None

    def vjp(_, g):
        G = istft_adjoint(g, window_length, hop)
        return np.stack([G.real, G.imag], axis=-1)

    return Stage("decode", forward, vjp)


def attack_stage(spec: AttackSpec, sample_rate: int, seed: int = 0) -> Stage:
    """Attack as a stage; stochastic draws restart from ``seed`` on every call."""

    def forward(x):
        return attack_forward(x, sample_rate, spec, np.random.default_rng(seed))

    def vjp(tape, g):
        return attack_vjp(spec, tape, g)

    mode = STRAIGHT_THROUGH if spec.grad_mode == STRAIGHT_THROUGH else spec.grad_mode
    return Stage(f"attack:{spec.kind}", forward, vjp, mode)


def features_stage(sample_rate: int, mel: MelConfig = MelConfig(), d: int = EMBED_DIM) -> Stage:
    return Stage(
        "features",
        lambda x: features_forward(x, sample_rate, mel, d),
        features_vjp,
    )


def function_stage(name: str, f: Callable, f_vjp: Callable) -> Stage:
    """Stage from a pure function and ``f_vjp(x, g)``."""
    return Stage(name, lambda x: (f(x), x), f_vjp)


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class FDReport:
    stage: str
    max_relative_error: float
    errors: list = field(default_factory=list)

    def passed(self, tol: float) -> bool:
        return self.max_relative_error < tol


def _relative(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0.0 else abs(a - b) / scale


def fd_verify(stage: Stage, probe: np.ndarray, directions: int = 5, step: float = 1e-6,
              seed: int = 0) -> FDReport:
    """Compare VJP-based directional derivatives against central differences.

    For a random output cotangent ``w`` and input direction ``u`` the
    scalar ``s(x) = <stage(x), w>`` is differenced along ``u`` and compared
    with ``<vjp(w), u>``.
    """
    rng = np.random.default_rng(seed)
    probe = np.asarray(probe, dtype=np.float64)
    y, state = stage.forward(probe)
    errors = []
    for _ in range(directions):
        w = rng.standard_normal(np.shape(y))
        u = rng.standard_normal(probe.shape)
        analytic = float(np.sum(stage.vjp(state, w) * u))
        plus = float(np.sum(stage.forward(probe + step * u)[0] * w))
        minus = float(np.sum(stage.forward(probe - step * u)[0] * w))
        errors.append(_relative((plus - minus) / (2 * step), analytic))
    return FDReport(stage.name, max(errors), errors)


def fd_check_scalar(f: Callable, grad: np.ndarray, x: np.ndarray, directions: int = 5,
                    step: float = 1e-6, seed: int = 0) -> float:
    """Max relative error between ``<grad, u>`` and central differences of scalar ``f``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(directions):
        u = rng.standard_normal(x.shape)
        fd = (f(x + step * u) - f(x - step * u)) / (2 * step)
        worst = max(worst, _relative(fd, float(np.sum(grad * u))))
    return worst


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(delta: np.ndarray, grad: np.ndarray, state: AdamState):
    """One bias-corrected Adam update; returns ``(new_delta, new_state)``."""
    if grad.shape != delta.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {delta.shape}")
    if not np.all(np.isfinite(grad)):
        bad = int(np.size(grad) - np.count_nonzero(np.isfinite(grad)))
        raise NonFiniteGradientError(f"{bad} non-finite gradient entries at step {state.t + 1}")
    m = np.zeros_like(delta) if state.m is None else state.m
    v = np.zeros_like(delta) if state.v is None else state.v
    t = state.t + 1
    m = state.beta1 * m + (1 - state.beta1) * grad
    v = state.beta2 * v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new_delta = delta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, m, v)
    return new_delta, new_state
