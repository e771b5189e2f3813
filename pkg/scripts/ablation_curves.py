"""Step-count and payload-length ablations written as CSV curves.

Example: python3 scripts/ablation_curves.py clips/ --key <64 hex> --out-dir results/
"""

import argparse
from pathlib import Path

import numpy as np

from latentmark.audio import load_wav
from latentmark.embed import EmbedConfig
from latentmark.evaluate import ablate_payload, ablate_steps, crop_clip, list_clips, write_rows_csv
from latentmark.features import Payload, SecretKey


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("clips")
    ap.add_argument("--key", required=True)
    ap.add_argument("--out-dir", type=Path, default=Path("results"))
    ap.add_argument("--max-steps", type=int, default=2000)
    ap.add_argument("--k-values", type=int, nargs="+", default=[4, 8, 16, 32, 64])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    key = SecretKey.from_hex(args.key)
    paths = list_clips(args.clips)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    cfg = EmbedConfig(max_steps=args.max_steps)

    checkpoints = list(range(0, args.max_steps + 1, 100))
    for i, path in enumerate(paths):
        payload = Payload.random(cfg.k, np.random.default_rng([args.seed, i]))
        rows, _ = ablate_steps(crop_clip(load_wav(path)), key, payload, checkpoints, cfg)
        write_rows_csv(rows, args.out_dir / f"steps_{Path(path).stem}.csv")

    rows = ablate_payload(paths, key, args.k_values, cfg, args.seed)
    write_rows_csv(rows, args.out_dir / "payload.csv")


if __name__ == "__main__":
    main()
