"""Write seeded music-like test clips to a directory for grid runs."""

import argparse
from pathlib import Path

from latentmark.audio import save_wav
from latentmark.synth import music_like


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--count", type=int, default=4)
    ap.add_argument("--seconds", type=float, default=5.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        save_wav(music_like(args.seconds, seed=args.seed + i), args.out / f"clip{i:03d}.wav")


if __name__ == "__main__":
    main()
