"""Hinge message loss, multi-scale log-Mel perceptual loss and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioClip
from .features import CarrierBank, Payload, mel_filterbank
from .transform import power, power_vjp, stft

MEL_POWER_FLOOR = 1e-8
HINGE_RTOL = 1e-12


@dataclass(frozen=True)
class LossConfig:
    margin: float = 5.0
    lambda_m: float = 160.0
    lambda_p: float = 4.0
    perceptual_scales: tuple = (64, 128, 256, 512, 1024, 2048)
    perceptual_mels: tuple = (8, 16, 32, 64, 80, 128)

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.lambda_m < 0 or self.lambda_p < 0:
            raise ValueError("loss weights must be non-negative")
        scales = tuple(self.perceptual_scales)
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ValueError("perceptual scales must be strictly increasing")
        if len(self.perceptual_mels) != len(scales):
            raise ValueError("need one mel band count per scale")
        if any(w % 4 for w in scales):
            raise ValueError("scale window lengths must be divisible by 4")

    def scale_specs(self):
        """(window, hop, mel bands) per scale; bands capped at window/2."""
        return [(w, w // 4, min(m, w // 2)) for w, m in zip(self.perceptual_scales, self.perceptual_mels)]


def message_loss(
    x: np.ndarray, bank: CarrierBank, m: Payload, margin: float = 5.0
) -> tuple[float, np.ndarray]:
    """Mean hinge ``max(0, margin - (x . v_i) m_i)`` over bits, with its gradient."""
    bits = m.as_array()
    if len(bits) != bank.k or x.shape != (bank.d,):
        raise ValueError("feature, carrier and payload dimensions disagree")
    slack = margin - (x @ bank.vectors) * bits
    # slack within rounding of the kink counts as the kink itself
    active = slack > HINGE_RTOL * margin
    loss = float(np.sum(slack[active])) / bank.k
    grad = -(bank.vectors[:, active] @ bits[active]) / bank.k
    return loss, grad


class MultiScaleMelLoss:
    """L1 distance between log-Mel spectrograms at several resolutions.

    The reference spectrograms are computed once so that repeated
    evaluation against new candidates only pays for the candidate side.
    """

    def __init__(self, reference: np.ndarray, sample_rate: int, cfg: LossConfig = LossConfig()):
        self.reference = np.asarray(reference, dtype=np.float64)
        self.sample_rate = sample_rate
        self.cfg = cfg
        self._scales = []
        for window, hop, bands in cfg.scale_specs():
            fb = mel_filterbank(bands, window, sample_rate, 0.0, sample_rate / 2)
            ref_log = self._log_mel(stft(self.reference, window, hop), fb)[0]
            self._scales.append((window, hop, fb, ref_log))

    @staticmethod
    def _log_mel(spec, fb):
        mel = power(spec) @ fb.T
        clamped = np.maximum(mel, MEL_POWER_FLOOR)
        return np.log(clamped), mel

    def __call__(self, candidate: np.ndarray, need_grad: bool = True):
        candidate = np.asarray(candidate, dtype=np.float64)
        if candidate.shape != self.reference.shape:
            raise ValueError(f"shape mismatch {candidate.shape} vs {self.reference.shape}")
        total = 0.0
        grad = np.zeros_like(candidate) if need_grad else None
        for window, hop, fb, ref_log in self._scales:
            spec = stft(candidate, window, hop)
            cand_log, mel = self._log_mel(spec, fb)
            diff = cand_log - ref_log
            total += float(np.mean(np.abs(diff)))
            if need_grad:
                # d log(max(mel, floor)) / d mel vanishes below the floor
                mel_bar = np.zeros_like(mel)
                np.divide(np.sign(diff), diff.size * mel, out=mel_bar, where=mel > MEL_POWER_FLOOR)
                grad += power_vjp(spec, mel_bar @ fb, window, hop, candidate.shape[-1], inplace=True)
        return total, grad


def perceptual_loss(
    reference: AudioClip, candidate: AudioClip, cfg: LossConfig = LossConfig()
) -> tuple[float, np.ndarray]:
    if reference.samples.shape != candidate.samples.shape:
        raise ValueError("reference and candidate shapes differ")
    return MultiScaleMelLoss(reference.samples, reference.sample_rate, cfg)(candidate.samples)


def total_loss(message, perceptual, cfg: LossConfig = LossConfig()):
    """Combine ``(value, grad)`` pairs as ``lambda_m * L_m + lambda_p * L_p``."""
    lm, gm = message
    lp, gp = perceptual
    value = cfg.lambda_m * lm + cfg.lambda_p * lp
    if gm is None and gp is None:
        return value, None
    grad = 0.0
    if gm is not None:
        grad = grad + cfg.lambda_m * np.asarray(gm)
    if gp is not None:
        grad = grad + cfg.lambda_p * np.asarray(gp)
    return value, grad
