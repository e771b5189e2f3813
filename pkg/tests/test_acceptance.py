"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The embedding criteria (5 to 9) share a small number of expensive runs
through module fixtures.  Embedding uses the default configuration (20 000
step ceiling, 1000 step patience) on 5 s clips; the trend criteria use 2 s
clips with a 600 step ceiling to keep the suite at desk scale.
"""

import time

import numpy as np
import pytest

from latentmark.attacks import ATTACK_KINDS, EXACT, GRAD_MODES, STOCHASTIC_KINDS, AttackSpec, apply_attack
from latentmark.audio import AudioClip, save_wav, si_snr
from latentmark.cli import main
from latentmark.embed import EmbedConfig, bits_after_attack, embed, verify
from latentmark.features import MelConfig, Payload, SecretKey, ber, derive_carriers, detect_payload
from latentmark.grad import (
    attack_stage,
    chain_forward_backward,
    decode_stage,
    fd_check_scalar,
    fd_verify,
    features_stage,
)
from latentmark.losses import LossConfig, MultiScaleMelLoss, message_loss
from latentmark.synth import music_like
from latentmark.transform import TransformConfig, decode, encode

SR = 44100
KEY = SecretKey(bytes(range(32)))
ROBUST_KINDS = ("quantize", "resample", "noise_gaussian", "boost", "duck", "suppress", "echo")
TREND_CFG = EmbedConfig(max_steps=600)


# ---------------------------------------------------------------------------
# shared embedding runs


@pytest.fixture(scope="module")
def converged():
    """k=16 on four distinct 5 s clips with the default stopping rule."""
    runs = []
    for i in range(4):
        clip = music_like(5.0, seed=200 + i)
        payload = Payload.random(16, np.random.default_rng(300 + i))
        marked, report = embed(clip, KEY, payload, EmbedConfig())
        runs.append((clip, payload, marked, report))
    return runs


@pytest.fixture(scope="module")
def seeded_runs():
    """Eight seeded runs for the step-count trend."""
    runs = []
    for seed in range(8):
        clip = music_like(2.0, seed=400 + seed)
        payload = Payload.random(16, np.random.default_rng(500 + seed))
        cfg = EmbedConfig(max_steps=TREND_CFG.max_steps, attack_seed=seed)
        runs.append((clip, embed(clip, KEY, payload, cfg)))
    return runs


@pytest.fixture(scope="module")
def payload_runs():
    """k=4 and k=64 on the same four 2 s clips."""
    out = {}
    for k in (4, 64):
        out[k] = []
        for i in range(4):
            clip = music_like(2.0, seed=600 + i)
            payload = Payload.random(k, np.random.default_rng([k, i]))
            cfg = EmbedConfig(k=k, max_steps=TREND_CFG.max_steps)
            out[k].append((clip, embed(clip, KEY, payload, cfg)))
    return out


# ---------------------------------------------------------------------------


def test_criterion_01_transform_fidelity(criterion):
    cfg = TransformConfig()
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for seconds in (0.1, 1.0, 10.0):
        x = rng.uniform(-1, 1, (2, int(seconds * SR)))
        y = decode(encode(AudioClip(x, SR), cfg), cfg, x.shape[-1]).samples
        worst = max(worst, float(np.max(np.abs(y - x))))
    elapsed = time.perf_counter() - t0
    criterion(1, worst < 1e-6 and elapsed < 5.0, f"max round-trip error {worst:.2e}, {elapsed:.2f} s")


def test_criterion_02_gradient_correctness(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    cfg = TransformConfig()
    clip = music_like(0.2, seed=3)
    x = clip.samples
    base = encode(clip, cfg).values
    errors = {}
    decoder = decode_stage(base, cfg.window_length, cfg.hop, clip.num_samples)
    errors["decode"] = fd_verify(decoder, 0.01 * rng.standard_normal(base.shape)).max_relative_error
    for kind in ATTACK_KINDS:
        if GRAD_MODES[kind] == EXACT:
            errors[kind] = fd_verify(attack_stage(AttackSpec(kind), SR, 5), x).max_relative_error
    errors["features"] = fd_verify(features_stage(SR), x).max_relative_error

    bank = derive_carriers(KEY, 16)
    payload = Payload.random(16, np.random.default_rng(0))
    loss_cfg = LossConfig()
    perc = MultiScaleMelLoss(x, SR, loss_cfg)

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
    errors["composed chain"] = fd_check_scalar(lambda d: composed(d)[0], g, delta)
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    criterion(2, errors[worst] < 1e-4 and elapsed < 120,
              f"{len(errors)} stages, worst {worst} {errors[worst]:.2e}, {elapsed:.1f} s")


def test_criterion_03_carrier_soundness(criterion):
    worst = 0.0
    reproducible = True
    for k in (8, 16, 64):
        v = derive_carriers(KEY, k, 128).vectors
        worst = max(worst, float(np.max(np.abs(v.T @ v - np.eye(k)))))
        reproducible &= np.array_equal(v, derive_carriers(SecretKey(bytes(range(32))), k, 128).vectors)
    criterion(3, worst < 1e-10 and reproducible, f"max Gram deviation {worst:.2e}, bitwise reproducible {reproducible}")


def test_criterion_04_null_ber(criterion):
    rng = np.random.default_rng(4)
    rates = []
    for trial in range(120):
        clip = music_like(1.0, seed=1000 + trial)
        key = SecretKey(rng.bytes(32))
        payload = Payload.random(16, rng)
        rates.append(ber(payload, detect_payload(clip, derive_carriers(key, 16))))
    mean = float(np.mean(rates))
    criterion(4, 0.45 <= mean <= 0.55, f"mean BER {mean:.4f} over {len(rates)} trials")


@pytest.mark.slow
def test_criterion_05_clean_recovery(converged, criterion):
    bers = [verify(marked, KEY, payload).ber for _, payload, marked, _ in converged]
    steps = [r.steps_run for *_, r in converged]
    ok = all(b == 0.0 for b in bers) and all(s <= 20000 for s in steps)
    criterion(5, ok, f"clean BER per clip {bers}, steps {steps}, "
                     f"stop {[r.stopping_reason for *_, r in converged]}")


@pytest.mark.slow
def test_criterion_06_trained_attack_robustness(converged, criterion):
    mel = MelConfig()
    means = {}
    for kind in ROBUST_KINDS:
        trials = 5 if kind in STOCHASTIC_KINDS else 1
        per_clip = []
        for i, (_, payload, marked, _) in enumerate(converged):
            bank = derive_carriers(KEY, len(payload))
            per_clip.append(np.mean([
                ber(payload, bits_after_attack(marked.samples, SR, AttackSpec(kind), 7000 + 10 * i + t, bank, mel))
                for t in range(trials)]))
        means[kind] = float(np.mean(per_clip))
    ok = all(v <= 0.25 for v in means.values())
    criterion(6, ok, "mean BER " + ", ".join(f"{k} {v:.3f}" for k, v in means.items()))


@pytest.mark.slow
def test_criterion_07_step_count_trend(seeded_runs, criterion):
    improved, monotone = 0, 0
    for _, (_, report) in seeded_runs:
        at_100 = [h.brr for h in report.history if h.step == 100][0]
        improved += report.best_brr > at_100
        best = [h.best_brr for h in report.history]
        monotone += all(b >= a for a, b in zip(best, best[1:]))
    n = len(seeded_runs)
    criterion(7, improved >= 0.75 * n and monotone == n,
              f"final > step-100 BRR on {improved}/{n} runs, running best non-decreasing on {monotone}/{n}")


@pytest.mark.slow
def test_criterion_08_payload_trend(payload_runs, criterion):
    brr = {k: float(np.mean([r.best_brr for _, (_, r) in runs])) for k, runs in payload_runs.items()}
    criterion(8, brr[4] >= brr[64], f"mean converged BRR k=4 {brr[4]:.4f}, k=64 {brr[64]:.4f}")


@pytest.mark.slow
def test_criterion_09_imperceptibility(converged, seeded_runs, payload_runs, criterion):
    pairs = [(clip, marked, report) for clip, _, marked, report in converged]
    for clip, (marked, report) in seeded_runs:
        pairs.append((clip, marked, report))
    for runs in payload_runs.values():
        for clip, (marked, report) in runs:
            pairs.append((clip, marked, report))
    snrs = [si_snr(clip, marked) for clip, marked, _ in pairs]
    logged = all(
        np.isfinite(r.best_lp) and any(h.step == r.best_step and np.isfinite(h.lp) for h in r.history)
        for _, _, r in pairs)
    ok = min(snrs) >= 10.0 and logged
    criterion(9, ok, f"min SI-SNR {min(snrs):.2f} dB over {len(snrs)} checkpoints, L_p finite and logged {logged}")


def test_criterion_10_attack_oracles(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    checks = {}
    ten = AudioClip(0.3 * rng.standard_normal((2, 10 * SR)), SR)
    cropped, _ = apply_attack(ten, AttackSpec("crop"), np.random.default_rng(1))
    checks["crop halves duration"] = cropped.duration == 5.0

    quantized, _ = apply_attack(ten, AttackSpec("quantize"))
    checks["quantize <= 512 values"] = len(np.unique(quantized.samples)) <= 512

    impulse = np.zeros((1, SR))
    impulse[0, 0] = 1.0
    echoed, _ = apply_attack(AudioClip(impulse, SR), AttackSpec("echo"))
    taps = np.flatnonzero(np.abs(echoed.samples[0]) > 1e-12)
    lag = round(0.5 * SR)
    checks["echo taps"] = (list(taps) == [0, lag] and abs(echoed.samples[0, 0] - 1.0) < 1e-12
                           and abs(echoed.samples[0, lag] - 0.5) < 1e-12)

    t = np.arange(2 * SR) / SR
    tone = AudioClip(np.tile(0.5 * np.sin(2 * np.pi * 4000 * t), (2, 1)), SR)
    low, _ = apply_attack(tone, AttackSpec("lowpass"))
    mid = slice(SR // 2, 3 * SR // 2)
    attenuation = 20 * np.log10(np.std(tone.samples[:, mid]) / np.std(low.samples[:, mid]))
    checks["lowpass 4 kHz >= 40 dB"] = attenuation >= 40.0
    elapsed = time.perf_counter() - t0
    failed = [name for name, ok in checks.items() if not ok]
    criterion(10, not failed and elapsed < 60,
              f"{len(checks) - len(failed)}/{len(checks)} oracles (lowpass {attenuation:.1f} dB), {elapsed:.1f} s"
              + (f", failed {failed}" if failed else ""))


def test_criterion_11_determinism(tmp_path, criterion, capsys):
    clips = tmp_path / "clips"
    clips.mkdir()
    save_wav(music_like(1.2, seed=11), clips / "a.wav")
    save_wav(music_like(1.1, seed=12), clips / "b.wav")
    key = "5a" * 32
    payload = "1100101011110000"
    outputs = []
    for run in range(2):
        d = tmp_path / f"run{run}"
        d.mkdir()
        main(["embed", str(clips / "a.wav"), "--key", key, "--payload", payload, "--out", str(d / "wm.wav"),
              "--report", str(d / "wm.json"), "--history", str(d / "wm.csv"), "--max-steps", "30", "--seed", "3"])
        main(["grid", str(clips), "--key", key, "--payload", payload, "--max-steps", "20", "--trials", "2",
              "--out", str(d / "grid.json"), "--csv", str(d / "grid.csv")])
        outputs.append({name: (d / name).read_bytes()
                        for name in ("wm.wav", "wm.json", "wm.csv", "grid.json", "grid.csv")})
    capsys.readouterr()
    same = [name for name in outputs[0] if outputs[0][name] == outputs[1][name]]
    criterion(11, len(same) == len(outputs[0]), f"bitwise identical: {', '.join(same)}")
