"""Compare Adam settings by the probe trajectory and the SI-SNR at the returned checkpoint.

Example: python3 scripts/optimizer_sweep.py --eps 1e-8 1e-2 3e-2 --seconds 2 --max-steps 1500
"""

import argparse
import csv
import sys

import numpy as np

from latentmark.embed import EmbedConfig, embed
from latentmark.features import Payload, SecretKey
from latentmark.synth import music_like


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lr", type=float, nargs="+", default=[1e-2])
    ap.add_argument("--eps", type=float, nargs="+", default=[1e-8, 1e-2, 3e-2, 1e-1])
    ap.add_argument("--seconds", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--max-steps", type=int, default=1500)
    ap.add_argument("--no-floor", action="store_true", help="disable the SI-SNR checkpoint floor")
    args = ap.parse_args()
    clip = music_like(args.seconds, seed=args.seed)
    payload = Payload.random(16, np.random.default_rng(args.seed))
    key = SecretKey(bytes(range(32)))
    out = csv.writer(sys.stdout)
    out.writerow(["lr", "eps", "step", "brr", "clean_ber", "lm", "lp", "sisnr", "best_step", "best_brr"])
    for lr in args.lr:
        for eps in args.eps:
            cfg = EmbedConfig(lr=lr, adam_eps=eps, max_steps=args.max_steps,
                              sisnr_floor=None if args.no_floor else 10.0)
            _, report = embed(clip, key, payload, cfg)
            for h in report.history:
                out.writerow([lr, eps, h.step, h.brr, h.clean_ber, h.lm, h.lp, h.sisnr,
                              report.best_step, report.best_brr])


if __name__ == "__main__":
    main()
