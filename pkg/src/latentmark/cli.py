"""Command-line interface: embed, verify, attack, grid, ablations and selfcheck.

Exit codes: 0 success, 1 verification/selfcheck failure, 2 invalid
arguments or configuration, 3 I/O error, 4 optimization aborted.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .attacks import ATTACK_KINDS, AttackParamError, AttackSpec, apply_attack
from .audio import AudioClip, AudioFormatError, load_wav, save_wav, si_snr
from .embed import EmbedConfig, config_dict, embed, verify
from .evaluate import (
    AttackGrid,
    ablate_payload,
    ablate_steps,
    config_hash,
    crop_clip,
    list_clips,
    run_grid,
    write_rows_csv,
)
from .features import MelConfig, Payload, SecretKey
from .losses import LossConfig
from .transform import TransformConfig

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO, EXIT_ABORTED = 0, 1, 2, 3, 4

log = logging.getLogger("latentmark")


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class GridSettings:
    trials: int = 5
    seed: int = 0
    swap_duck_boost: bool = False
    payload_policy: str = "random"
    payload_seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    grid: GridSettings = field(default_factory=GridSettings)

    def to_dict(self) -> dict:
        return {"embed": config_dict(self.embed), "grid": asdict(self.grid)}

    def hash(self) -> str:
        return config_hash(self.to_dict())


def _build(cls, values: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown {where} option(s): {', '.join(sorted(unknown))}")
    return cls(**values)


def resolve_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Config file values, then flag overrides, validated as a whole.

    The file is JSON with optional sections ``embed``, ``loss``,
    ``transform``, ``mel`` and ``grid``; every field has a default.
    """
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError:
            raise
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(raw) - {"embed", "loss", "transform", "mel", "grid"}
    if unknown:
        raise UsageError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    embed_values = dict(raw.get("embed", {}))
    for section in ("loss", "transform", "mel"):
        embed_values.pop(section, None)
    grid_values = dict(raw.get("grid", {}))
    for name, value in (overrides or {}).items():
        if value is None:
            continue
        if name.startswith("grid."):
            grid_values[name[len("grid."):]] = value
        else:
            embed_values[name] = value
    try:
        loss_values = dict(raw.get("loss", {}))
        for key in ("perceptual_scales", "perceptual_mels"):
            if key in loss_values:
                loss_values[key] = tuple(loss_values[key])
        embed_cfg = _build(EmbedConfig, {
            **embed_values,
            "loss": _build(LossConfig, loss_values, "loss"),
            "transform": _build(TransformConfig, raw.get("transform", {}), "transform"),
            "mel": _build(MelConfig, raw.get("mel", {}), "mel"),
        }, "embed")
        grid = _build(GridSettings, grid_values, "grid")
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    if grid.payload_policy not in ("fixed", "random"):
        raise UsageError("grid.payload_policy must be 'fixed' or 'random'")
    return RunConfig(embed_cfg, grid)


def _key(text: str) -> SecretKey:
    try:
        return SecretKey.from_hex(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _payload(text: str) -> Payload:
    try:
        return Payload.from_bitstring(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _read(path) -> AudioClip:
    try:
        return load_wav(path)
    except AudioFormatError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _parse_param(text: str):
    name, sep, value = text.partition("=")
    if not sep or not name:
        raise UsageError(f"--param expects name=value, got {text!r}")
    try:
        number = float(value)
    except ValueError:
        raise UsageError(f"parameter {name} must be numeric, got {value!r}") from None
    return name, int(number) if number.is_integer() and "." not in value else number


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------------------
# commands


def _config_for(args, **extra) -> RunConfig:
    overrides = {"max_steps": getattr(args, "max_steps", None),
                 "attack_seed": getattr(args, "seed", None),
                 "lr": getattr(args, "lr", None), **extra}
    return resolve_config(getattr(args, "config", None), overrides)


def cmd_embed(args) -> int:
    key, payload = _key(args.key), _payload(args.payload)
    run_cfg = _config_for(args, k=len(payload) if args.config is None else None)
    if len(payload) != run_cfg.embed.k:
        raise UsageError(f"payload has {len(payload)} bits but k={run_cfg.embed.k}")
    clip = _read(args.input)
    try:
        marked, report = embed(clip, key, payload, run_cfg.embed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    save_wav(marked, args.out)
    data = report.to_dict()
    # wall-clock time varies between identical runs, so it lives in a sidecar file
    runtime = data.pop("runtime")
    data["config_hash"] = run_cfg.hash()
    data["seeds"] = {"attack_seed": run_cfg.embed.attack_seed, "probe_seed": run_cfg.embed.probe_seed}
    data["si_snr_db"] = si_snr(clip, marked)
    if args.report:
        report_path = Path(args.report)
        report_path.write_text(json.dumps(data, indent=2, sort_keys=True))
        report_path.with_suffix(".runtime.json").write_text(json.dumps(runtime, indent=2))
    if args.history:
        report.history_csv(args.history)
    print(f"steps {report.steps_run}  best step {report.best_step}  probe BRR {report.best_brr:.4f}  "
          f"clean BER {report.final_clean_ber:.4f}  SI-SNR {data['si_snr_db']:.2f} dB  ({report.stopping_reason})")
    return EXIT_ABORTED if report.stopping_reason.startswith("aborted") else EXIT_OK


def cmd_verify(args) -> int:
    key, expected = _key(args.key), _payload(args.expected)
    run_cfg = resolve_config(args.config)
    result = verify(_read(args.input), key, expected, run_cfg.embed.mel, run_cfg.embed.embed_dim)
    bits = result.decoded.to_bitstring() if result.decoded is not None else "-" * len(expected)
    print(f"bits {bits}")
    print(f"BER {result.ber:.3f}")
    if result.failed:
        print(f"note: decoding failed ({result.note})")
    return EXIT_OK if result.match else EXIT_FAIL


def cmd_attack(args) -> int:
    if args.attack not in ATTACK_KINDS:
        raise UsageError(f"unknown attack {args.attack!r}; valid: {', '.join(ATTACK_KINDS)}")
    params = dict(_parse_param(p) for p in args.param or [])
    try:
        spec = AttackSpec(args.attack, params)
    except AttackParamError as exc:
        raise UsageError(str(exc)) from None
    clip = _read(args.input)
    out, _ = apply_attack(clip, spec, np.random.default_rng(args.seed))
    save_wav(out, args.out)
    print(f"{spec.describe()} seed={args.seed} samples {clip.num_samples} -> {out.num_samples}")
    return EXIT_OK


def cmd_grid(args) -> int:
    key = _key(args.key)
    overrides = {"grid.trials": args.trials, "grid.seed": args.grid_seed,
                 "grid.payload_policy": "fixed" if args.payload else None}
    run_cfg = _config_for(args, **overrides)
    payload = _payload(args.payload) if args.payload else None
    if payload is not None and len(payload) != run_cfg.embed.k:
        run_cfg = replace(run_cfg, embed=replace(run_cfg.embed, k=len(payload)))
    paths = list_clips(args.clips)
    if not paths:
        raise UsageError(f"no WAV files in {args.clips}")
    g = run_cfg.grid
    grid = AttackGrid.default(trials=g.trials, seed=g.seed,
                              swap_duck_boost=g.swap_duck_boost or args.swap_duck_boost)
    report = run_grid(paths, key, grid, run_cfg.embed, payload_policy=g.payload_policy,
                      payload=payload, payload_seed=g.payload_seed, skip_embed=args.skip_embed,
                      external_codec=args.external_codec, jobs=args.jobs)
    report.metadata["run_config_hash"] = run_cfg.hash()
    report.to_json(args.out)
    if args.csv:
        report.to_csv(args.csv)
    table = report.render_table()
    if args.table:
        Path(args.table).write_text(table + "\n")
    print(table)
    return EXIT_OK


def _clips_from(source) -> list:
    paths = list_clips(source)
    if not paths:
        raise UsageError(f"no WAV files in {source}")
    return [crop_clip(_read(p)) for p in paths]


def cmd_ablate_payload(args) -> int:
    run_cfg = _config_for(args)
    rows = ablate_payload(_clips_from(args.clips), _key(args.key), _int_list(args.k_values),
                          run_cfg.embed, payload_seed=args.payload_seed)
    write_rows_csv(rows, args.out)
    for r in rows:
        print(f"k={r.k:3d}  BRR {r.mean_brr:.4f}  SI-SNR {r.mean_sisnr:.2f} dB  clean BER {r.mean_clean_ber:.4f}")
    return EXIT_OK


def cmd_ablate_steps(args) -> int:
    payload = _payload(args.payload)
    run_cfg = _config_for(args, k=len(payload))
    rows, _ = ablate_steps(crop_clip(_read(args.input)), _key(args.key), payload,
                           _int_list(args.checkpoints), run_cfg.embed)
    write_rows_csv(rows, args.out)
    for r in rows:
        print(f"step {r.step:6d}  BRR {r.brr:.4f}  best {r.best_brr:.4f}")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    from .selfcheck import corrupted_window, render, run_selfcheck

    if args.corrupt_window:
        with corrupted_window():
            results = run_selfcheck()
    else:
        results = run_selfcheck()
    print(render(results))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_FAIL


# ---------------------------------------------------------------------------
# parser


def _common(p, steps=True):
    p.add_argument("--config", help="JSON config file (flags override its values)")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    if steps:
        p.add_argument("--max-steps", type=int, help="optimization step budget")
        p.add_argument("--seed", type=int, help="training-attack sampling seed")
        p.add_argument("--lr", type=float, help="Adam learning rate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentmark", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="watermark a WAV file")
    p.add_argument("input")
    p.add_argument("--key", required=True, help="secret key, 64 hex characters")
    p.add_argument("--payload", required=True, help="payload bits as a 0/1 string")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="JSON report path")
    p.add_argument("--history", help="probe history CSV path")
    _common(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("verify", help="decode and compare a payload")
    p.add_argument("input")
    p.add_argument("--key", required=True)
    p.add_argument("--expected", required=True)
    _common(p, steps=False)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("attack", help="apply one attack to a WAV file")
    p.add_argument("input")
    p.add_argument("--attack", required=True, help="attack name")
    p.add_argument("--param", action="append", metavar="NAME=VALUE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("grid", help="robustness grid over a directory of clips")
    p.add_argument("clips")
    p.add_argument("--key", required=True)
    p.add_argument("--payload", help="fixed payload for every clip (default: per-clip random)")
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--csv", help="per-cell CSV path")
    p.add_argument("--table", help="rendered text table path")
    p.add_argument("--trials", type=int)
    p.add_argument("--grid-seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--skip-embed", action="store_true", help="attack the clips as they are")
    p.add_argument("--swap-duck-boost", action="store_true")
    p.add_argument("--external-codec", metavar="BINARY", help="encoder binary for real MP3/AAC cells")
    _common(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("ablate-payload", help="converged BRR versus payload length")
    p.add_argument("clips")
    p.add_argument("--key", required=True)
    p.add_argument("--k-values", default="4,8,16,32,64")
    p.add_argument("--payload-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_ablate_payload)

    p = sub.add_parser("ablate-steps", help="probe BRR versus optimization step")
    p.add_argument("input")
    p.add_argument("--key", required=True)
    p.add_argument("--payload", required=True)
    p.add_argument("--checkpoints", default="0,100,500,1000,2000,5000,10000,20000")
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_ablate_steps)

    p = sub.add_parser("selfcheck", help="numerical self-checks")
    p.add_argument("--corrupt-window", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "print_config", False):
            run_cfg = _config_for(args)
            print(json.dumps({**run_cfg.to_dict(), "config_hash": run_cfg.hash()}, indent=2, sort_keys=True))
            return EXIT_OK
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
