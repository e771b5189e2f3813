"""Robustness grids, quality metrics and the step/payload ablations."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .attacks import (
    EVAL_PARAMS,
    EXTERNAL_CODECS,
    STOCHASTIC_KINDS,
    AttackSpec,
    external_codec_roundtrip,
)
from .audio import AudioClip, load_wav, si_snr
from .embed import EmbedConfig, bits_after_attack, config_dict, embed
from .features import Payload, SecretKey, ber, derive_carriers

log = logging.getLogger(__name__)

# (column label, attack kind); the average runs over every column, clean included
GRID_COLUMNS = (
    ("None", "identity"),
    ("BP", "bandpass"),
    ("LP", "lowpass"),
    ("HP", "highpass"),
    ("E", "echo"),
    ("S", "smooth"),
    ("DA", "duck"),
    ("BA", "boost"),
    ("GN", "noise_gaussian"),
    ("PN", "noise_pink"),
    ("MP3", "codec_surrogate_mp3"),
    ("AAC", "codec_surrogate_aac"),
    ("RS", "resample"),
    ("Q", "quantize"),
    ("SS", "suppress"),
    ("RC", "crop"),
    ("Speed", "speed"),
    ("Regen", "regen_surrogate"),
)

MAX_CLIP_SECONDS = 10.0


def config_hash(resolved: dict) -> str:
    """Short SHA-256 of a JSON-serialisable config (keys sorted)."""
    text = json.dumps(resolved, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class AttackGrid:
    attacks: tuple
    trials: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        labels = [label for label, _ in self.attacks]
        if len(set(labels)) != len(labels):
            raise ValueError("attack labels must be unique")

    @classmethod
    def default(cls, trials: int = 5, seed: int = 0, swap_duck_boost: bool = False,
                kinds=None) -> "AttackGrid":
        """Every attack at its evaluation parameters.

        ``swap_duck_boost`` exchanges the duck and boost gains for readers
        who take the printed pairing as a transposition.
        """
        attacks = []
        for label, kind in GRID_COLUMNS:
            if kinds is not None and kind not in kinds:
                continue
            params = {}
            if swap_duck_boost and kind in ("duck", "boost"):
                other = "boost" if kind == "duck" else "duck"
                params = {"gain": EVAL_PARAMS[other]["gain"]}
            attacks.append((label, AttackSpec(kind, params)))
        return cls(tuple(attacks), trials, seed)

    def trial_seeds(self, clip_index: int, attack_index: int) -> list:
        spec = self.attacks[attack_index][1]
        count = self.trials if spec.kind in STOCHASTIC_KINDS else 1
        ss = np.random.SeedSequence([self.seed, clip_index, attack_index])
        return [int(s) for s in ss.generate_state(count)]

    def describe(self) -> list:
        return [{"label": label, "attack": spec.describe()} for label, spec in self.attacks]


@dataclass
class GridCell:
    clip: str
    attack: str
    spec: str
    ber: float
    trials: list
    source: str = "surrogate"


@dataclass
class GridReport:
    cells: list
    per_attack: dict
    average: float
    quality: dict
    metadata: dict
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "cells": [asdict(c) for c in self.cells],
            "per_attack": self.per_attack,
            "average": self.average,
            "quality": self.quality,
            "metadata": self.metadata,
            "warnings": self.warnings,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["clip", "attack", "spec", "ber", "trials", "source"])
            for c in self.cells:
                writer.writerow([c.clip, c.attack, c.spec, repr(c.ber),
                                 " ".join(repr(t) for t in c.trials), c.source])

    def render_table(self) -> str:
        labels = list(self.per_attack)
        clips = list(self.quality)
        by_cell = {(c.clip, c.attack): c.ber for c in self.cells}
        width = max([len("Avg.")] + [len(name) for name in clips]) + 2
        header = "clip".ljust(width) + "".join(f"{label:>7}" for label in labels) + f"{'SI-SNR':>9}"
        lines = [header, "-" * len(header)]
        for name in clips:
            row = name.ljust(width)
            row += "".join(f"{100 * by_cell[(name, label)]:7.2f}" for label in labels)
            row += f"{self.quality[name]['si_snr']:9.2f}"
            lines.append(row)
        lines.append("-" * len(header))
        lines.append("mean".ljust(width) + "".join(f"{100 * self.per_attack[label]:7.2f}" for label in labels))
        lines.append(f"Avg. BER (%) over all columns: {100 * self.average:.2f}")
        return "\n".join(lines)


def list_clips(source) -> list:
    """WAV files of a directory (sorted) or an explicit list of paths."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if path.is_dir():
            return sorted(p for p in path.iterdir() if p.suffix.lower() == ".wav")
        return [path]
    return [Path(p) for p in source]


def crop_clip(clip: AudioClip, seconds: float = MAX_CLIP_SECONDS) -> AudioClip:
    limit = int(round(seconds * clip.sample_rate))
    if clip.num_samples <= limit:
        return clip
    return clip.with_samples(clip.samples[:, :limit])


def payload_for(policy: str, k: int, clip_index: int, seed: int, fixed: Payload | None) -> Payload:
    if policy == "fixed":
        if fixed is None:
            raise ValueError("fixed payload policy needs a payload")
        return fixed
    if policy == "random":
        return Payload.random(k, np.random.default_rng([seed, clip_index]))
    raise ValueError(f"unknown payload policy {policy!r}")


def _attack_ber(samples, sample_rate, spec, seed, bank, payload, mel, external):
    """BER of one attacked copy; ``external`` names an encoder binary or is None."""
    if external and spec.kind in EXTERNAL_CODECS:
        out, ok = external_codec_roundtrip(AudioClip(samples, sample_rate), spec, external)
        if ok:
            decoded = bits_after_attack(out.samples, sample_rate, AttackSpec("identity"), 0, bank, mel)
            return ber(payload, decoded), "external"
        value = ber(payload, bits_after_attack(samples, sample_rate, spec, seed, bank, mel))
        return value, "surrogate (external encoder unavailable)"
    return ber(payload, bits_after_attack(samples, sample_rate, spec, seed, bank, mel)), "surrogate"


def _grid_clip(job):
    """Embed (unless skipped) and attack one clip; runs in a worker process."""
    index, path, key, payload, grid, cfg, skip_embed, external = job
    try:
        clip = crop_clip(load_wav(path))
    except (OSError, ValueError) as exc:
        return index, None, f"skipped {path}: {exc}"
    name = Path(path).name
    if skip_embed:
        marked, clean_ber, lp = clip, None, 0.0
    else:
        marked, report = embed(clip, key, payload, cfg)
        clean_ber, lp = report.final_clean_ber, report.best_lp
    bank = derive_carriers(key, len(payload), cfg.embed_dim)
    cells = []
    for a, (label, spec) in enumerate(grid.attacks):
        trials, sources = [], set()
        for seed in grid.trial_seeds(index, a):
            value, source = _attack_ber(marked.samples, marked.sample_rate, spec, seed, bank,
                                        payload, cfg.mel, external)
            trials.append(value)
            sources.add(source)
        cells.append(GridCell(name, label, spec.describe(), float(np.mean(trials)), trials,
                              ";".join(sorted(sources))))
    quality = {"si_snr": si_snr(clip, marked), "clean_ber": clean_ber, "lp": lp,
               "payload": payload.to_bitstring()}
    return index, (name, cells, quality), None


def run_grid(clips, key: SecretKey, grid: AttackGrid | None = None, cfg: EmbedConfig = EmbedConfig(),
             payload_policy: str = "random", payload: Payload | None = None, payload_seed: int = 0,
             skip_embed: bool = False, external_codec: str | None = None, jobs: int = 1) -> GridReport:
    """Embed every clip, attack it with every grid column and tabulate BER."""
    grid = grid or AttackGrid.default()
    paths = list_clips(clips)
    if not paths:
        raise ValueError("no WAV clips to evaluate")
    jobs_list = [
        (i, p, key, payload_for(payload_policy, cfg.k, i, payload_seed, payload), grid, cfg,
         skip_embed, external_codec)
        for i, p in enumerate(paths)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_grid_clip, jobs_list))
    else:
        results = [_grid_clip(j) for j in jobs_list]
    results.sort(key=lambda r: r[0])

    cells, quality, warnings = [], {}, []
    for _, result, warning in results:
        if warning:
            log.warning(warning)
            warnings.append(warning)
            continue
        name, clip_cells, clip_quality = result
        cells.extend(clip_cells)
        quality[name] = clip_quality
    if not quality:
        raise ValueError("no readable clips")
    per_attack = {}
    for label, _ in grid.attacks:
        per_attack[label] = float(np.mean([c.ber for c in cells if c.attack == label]))
    average = float(np.mean(list(per_attack.values())))
    resolved = {"embed": config_dict(cfg), "grid": grid.describe(), "trials": grid.trials,
                "grid_seed": grid.seed, "payload_policy": payload_policy,
                "payload_seed": payload_seed, "skip_embed": skip_embed}
    metadata = {
        "config_hash": config_hash(resolved),
        "grid_seed": grid.seed,
        "attack_seed": cfg.attack_seed,
        "probe_seed": cfg.probe_seed,
        "payload_policy": payload_policy,
        "payload_seed": payload_seed,
        "skip_embed": skip_embed,
        "external_codec": external_codec,
        "attacks": grid.describe(),
        "resolved_config": resolved,
    }
    return GridReport(cells, per_attack, average, quality, metadata, warnings)


# ---------------------------------------------------------------------------
# ablations


@dataclass
class PayloadRow:
    k: int
    mean_brr: float
    mean_sisnr: float
    mean_clean_ber: float
    clips: int


def ablate_payload(clips, key: SecretKey, k_values=(4, 8, 16, 32, 64),
                   cfg: EmbedConfig = EmbedConfig(), payload_seed: int = 0) -> list:
    """Converged probe-set BRR and SI-SNR per payload length, averaged over clips."""
    loaded = [c if isinstance(c, AudioClip) else crop_clip(load_wav(c)) for c in clips]
    rows = []
    for k in k_values:
        run_cfg = replace(cfg, k=k)
        brr, snr, clean = [], [], []
        for i, clip in enumerate(loaded):
            payload = Payload.random(k, np.random.default_rng([payload_seed, k, i]))
            _, report = embed(clip, key, payload, run_cfg)
            brr.append(report.best_brr)
            snr.append(report.final_sisnr)
            clean.append(report.final_clean_ber)
        rows.append(PayloadRow(k, float(np.mean(brr)), float(np.mean(snr)), float(np.mean(clean)),
                               len(loaded)))
    return rows


@dataclass
class StepRow:
    step: int
    brr: float
    best_brr: float


def ablate_steps(clip: AudioClip, key: SecretKey, payload: Payload, checkpoints,
                 cfg: EmbedConfig = EmbedConfig()):
    """Probe-set BRR over optimisation steps from a single run.

    Each checkpoint reports the latest probe at or before it.  Returns
    ``(rows, report)``.
    """
    checkpoints = list(checkpoints)
    if any(b <= a for a, b in zip(checkpoints, checkpoints[1:])):
        raise ValueError("checkpoints must be strictly increasing")
    _, report = embed(clip, key, payload, cfg)
    rows = []
    for c in checkpoints:
        earlier = [r for r in report.history if r.step <= c]
        if not earlier:
            continue
        r = earlier[-1]
        rows.append(StepRow(c, r.brr, r.best_brr))
    return rows, report


def write_rows_csv(rows, path) -> None:
    rows = list(rows)
    if not rows:
        Path(path).write_text("")
        return
    names = list(asdict(rows[0]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in asdict(row).values()])
