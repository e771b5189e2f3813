"""Per-clip watermark optimization and verification."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .attacks import (
    EVAL_ONLY,
    TRAINABLE_KINDS,
    TRAINING_RANGES,
    AttackContractError,
    AttackSampler,
    AttackSpec,
    _draw,
    attack_forward,
)
from .audio import AudioClip, si_snr
from .features import (
    EMBED_DIM,
    CapacityError,
    CarrierBank,
    FeatureExtractionError,
    MelConfig,
    Payload,
    SecretKey,
    ber,
    decode_bits,
    derive_carriers,
    features_forward,
)
from .grad import AdamState, adam_step, attack_stage, chain_forward_backward, decode_stage, features_stage
from .losses import LossConfig, MultiScaleMelLoss, message_loss
from .transform import TransformConfig, stft

log = logging.getLogger(__name__)


class EmbedAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class EmbedConfig:
    k: int = 16
    max_steps: int = 20000
    patience: int = 1000
    probe_interval: int = 50
    probe_count: int = 8
    probe_seed: int = 1234
    attack_seed: int = 0
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 3e-2
    sisnr_floor: float | None = 10.0
    embed_dim: int = EMBED_DIM
    min_duration: float = 1.0
    attack_kinds: tuple = TRAINABLE_KINDS
    include_identity: bool = True
    transform: TransformConfig = field(default_factory=TransformConfig)
    mel: MelConfig = field(default_factory=MelConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.patience < self.probe_interval:
            raise ValueError("patience must be at least one probe interval")
        if self.probe_interval < 1 or self.max_steps < 0:
            raise ValueError("probe_interval >= 1 and max_steps >= 0 required")
        if not 1 <= self.k <= self.embed_dim:
            raise CapacityError(f"k={self.k} does not fit embed_dim={self.embed_dim}")
        object.__setattr__(self, "attack_kinds", tuple(self.attack_kinds))
        AttackSampler(self.attack_kinds, self.include_identity)

    def sampler(self) -> AttackSampler:
        return AttackSampler(self.attack_kinds, self.include_identity)


def probe_set(cfg: EmbedConfig) -> list:
    """Fixed, seeded ``(spec, seed)`` attack instances used to measure robustness.

    The clean (identity) instance comes first when identity is enabled; the
    remaining kinds are drawn without replacement from the enabled training
    kinds so the set spans as many kinds as ``probe_count`` allows.
    """
    rng = np.random.default_rng(cfg.probe_seed)
    kinds = list(cfg.attack_kinds) or ["identity"]
    order = [kinds[i] for i in rng.permutation(len(kinds))]
    probes = []
    if cfg.include_identity and "identity" not in kinds:
        probes.append((AttackSpec("identity"), 0))
    for i in range(cfg.probe_count - len(probes)):
        kind = order[i % len(order)]
        params = {} if kind == "identity" else {n: _draw(rng, r) for n, r in TRAINING_RANGES[kind].items()}
        probes.append((AttackSpec(kind, params), int(rng.integers(0, 2**31))))
    return probes


def bits_after_attack(samples: np.ndarray, sample_rate: int, spec: AttackSpec, seed: int,
                      bank: CarrierBank, mel: MelConfig):
    """Decoded payload after an attack, or ``None`` when decoding fails."""
    try:
        y, _ = attack_forward(samples, sample_rate, spec, np.random.default_rng(seed))
        x, _ = features_forward(y, sample_rate, mel, bank.d)
    except FeatureExtractionError:
        return None
    return decode_bits(x, bank)


@dataclass
class ProbeRecord:
    step: int
    brr: float
    best_brr: float
    clean_ber: float
    lm: float
    lp: float
    sisnr: float


@dataclass
class EmbedReport:
    steps_run: int
    history: list
    final_clean_ber: float
    best_step: int
    best_brr: float
    best_lp: float
    final_sisnr: float
    stopping_reason: str
    wall_clock_seconds: float
    payload: str = ""
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["runtime"] = {"wall_clock_seconds": d.pop("wall_clock_seconds")}
        return d

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def history_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "brr", "best_brr", "clean_ber", "lm", "lp", "sisnr"])
            for r in self.history:
                writer.writerow([r.step, repr(r.brr), repr(r.best_brr), repr(r.clean_ber),
                                 repr(r.lm), repr(r.lp), repr(r.sisnr)])


def config_dict(cfg: EmbedConfig) -> dict:
    d = asdict(cfg)
    d["attack_kinds"] = list(cfg.attack_kinds)
    return d


class Embedder:
    """Holds everything one embedding run needs and exposes the step objective."""

    def __init__(self, clip: AudioClip, key: SecretKey, payload: Payload, cfg: EmbedConfig):
        if len(payload) != cfg.k:
            raise ValueError(f"payload has {len(payload)} bits, config expects k={cfg.k}")
        if clip.duration < cfg.min_duration:
            raise ValueError(f"clip lasts {clip.duration:.3f} s; need >= {cfg.min_duration} s")
        self.clip, self.key, self.payload, self.cfg = clip, key, payload, cfg
        self.sr = clip.sample_rate
        self.n = clip.num_samples
        tc = cfg.transform
        Z = stft(clip.samples, tc.window_length, tc.hop)
        self.base = np.stack([Z.real, Z.imag], axis=-1)
        self.bank = derive_carriers(key, cfg.k, cfg.embed_dim)
        self.perceptual = MultiScaleMelLoss(clip.samples, self.sr, cfg.loss)
        self.decoder = decode_stage(self.base, tc.window_length, tc.hop, self.n)
        self.features = features_stage(self.sr, cfg.mel, cfg.embed_dim)
        self.probes = probe_set(cfg)

    def waveform(self, delta: np.ndarray) -> np.ndarray:
        return self.decoder.forward(delta)[0]

    def objective(self, delta: np.ndarray, spec: AttackSpec, seed: int):
        """Total loss and its gradient w.r.t. ``delta`` under one attack instance."""
        if spec.grad_mode == EVAL_ONLY:
            raise AttackContractError(f"{spec.kind} cannot be used during optimization")
        loss_cfg = self.cfg.loss
        parts = {}

        def head(a_w):
            lp, gp = self.perceptual(a_w)

            def message_head(x):
                lm, gx = message_loss(x, self.bank, self.payload, loss_cfg.margin)
                parts["lm"] = lm
                return lm, gx

            _, g_msg = chain_forward_backward(
                [attack_stage(spec, self.sr, seed), self.features], a_w, message_head
            )
            parts["lp"] = lp
            total = loss_cfg.lambda_m * parts["lm"] + loss_cfg.lambda_p * lp
            return total, loss_cfg.lambda_m * g_msg + loss_cfg.lambda_p * gp

        total, grad = chain_forward_backward([self.decoder], delta, head)
        return total, grad, parts

    def probe(self, delta: np.ndarray):
        a_w = self.waveform(delta)
        mel = self.cfg.mel
        clean = bits_after_attack(a_w, self.sr, AttackSpec("identity"), 0, self.bank, mel)
        clean_ber = ber(self.payload, clean)
        bers = [ber(self.payload, bits_after_attack(a_w, self.sr, s, seed, self.bank, mel))
                for s, seed in self.probes]
        x, _ = features_forward(a_w, self.sr, mel, self.bank.d)
        lm = message_loss(x, self.bank, self.payload, self.cfg.loss.margin)[0]
        lp = self.perceptual(a_w, need_grad=False)[0]
        sisnr = si_snr(self.clip, AudioClip(a_w, self.sr))
        return 1.0 - float(np.mean(bers)), clean_ber, lm, lp, sisnr


def embed(clip: AudioClip, key: SecretKey, payload: Payload, cfg: EmbedConfig = EmbedConfig(),
          callback=None):
    """Optimize a latent perturbation so that ``payload`` survives the training attacks.

    Returns ``(watermarked clip, EmbedReport)``.  The returned audio comes
    from the best probe checkpoint (highest robustness, then lowest
    perceptual loss); optimization stops once the probe robustness has not
    improved for ``cfg.patience`` steps.
    """
    t0 = time.perf_counter()
    run = Embedder(clip, key, payload, cfg)
    sampler = cfg.sampler()
    rng = np.random.default_rng(cfg.attack_seed)
    delta = np.zeros_like(run.base)
    adam = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)

    history = []
    best = None  # (brr, -lp, step, delta)
    last_improvement = 0
    reason = "max_steps"

    def record(step):
        nonlocal best, last_improvement
        brr, clean_ber, lm, lp, sisnr = run.probe(delta)
        # checkpoints below the SI-SNR floor are never returned; step 0 always qualifies
        eligible = step == 0 or cfg.sisnr_floor is None or sisnr >= cfg.sisnr_floor
        if best is None or (eligible and brr > best[0]):
            best = (brr, -lp, step, delta.copy(), clean_ber, sisnr)
            last_improvement = step
        elif eligible and brr == best[0] and -lp > best[1]:
            best = (brr, -lp, step, delta.copy(), clean_ber, sisnr)
        rec = ProbeRecord(step, brr, best[0], clean_ber, lm, lp, sisnr)
        history.append(rec)
        if callback is not None:
            callback(rec)
        log.debug("step %d brr %.4f clean %.4f lm %.4f lp %.4f si-snr %.2f",
                  step, brr, clean_ber, lm, lp, sisnr)

    record(0)
    step = 0
    for step in range(1, cfg.max_steps + 1):
        spec = sampler.sample(rng)
        seed = int(rng.integers(0, 2**31))
        total, grad, _ = run.objective(delta, spec, seed)
        if not np.isfinite(total) or not np.all(np.isfinite(grad)):
            reason = "aborted: non-finite loss"
            log.error("non-finite loss at step %d (%s); keeping best checkpoint", step, spec.describe())
            step -= 1
            break
        delta, adam = adam_step(delta, grad, adam)
        if step % cfg.probe_interval == 0:
            record(step)
            if step - last_improvement >= cfg.patience:
                reason = "patience"
                break
    if history[-1].step != step and reason != "aborted: non-finite loss":
        record(step)

    brr, neg_lp, best_step, best_delta, clean_ber, sisnr = best
    watermarked = AudioClip(run.waveform(best_delta), clip.sample_rate)
    report = EmbedReport(
        steps_run=step,
        history=history,
        final_clean_ber=clean_ber,
        best_step=best_step,
        best_brr=brr,
        best_lp=-neg_lp,
        final_sisnr=sisnr,
        stopping_reason=reason,
        wall_clock_seconds=time.perf_counter() - t0,
        payload=payload.to_bitstring(),
        config=config_dict(cfg),
    )
    return watermarked, report


@dataclass
class VerifyResult:
    decoded: Payload | None
    ber: float
    match: bool
    failed: bool = False
    note: str = ""


def verify(clip: AudioClip, key: SecretKey, expected: Payload, mel: MelConfig = MelConfig(),
           d: int = EMBED_DIM) -> VerifyResult:
    bank = derive_carriers(key, len(expected), d)
    try:
        decoded = decode_bits(features_forward(clip.samples, clip.sample_rate, mel, d)[0], bank)
    except FeatureExtractionError as exc:
        return VerifyResult(None, ber(expected, None), False, True, str(exc))
    value = ber(expected, decoded)
    return VerifyResult(decoded, value, value == 0.0)
