#!/usr/bin/env python3
"""Build a labeled synthetic WAV corpus for desk-scale experiments.

Layout matches the real dataset convention (<root>/<label>/*.wav) so the
preprocess and train commands run on it unchanged.
"""
import argparse
from pathlib import Path

from prowave.audio import synth_fixture, write_wav_file

KINDS = ["tone", "chirp", "silence+tone"]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("--per-label", type=int, default=20)
    ap.add_argument("--labels", nargs="*", default=["zero", "one", "two"])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    root = Path(args.out_dir)
    seed = args.seed
    for label in args.labels:
        d = root / label
        d.mkdir(parents=True, exist_ok=True)
        for i in range(args.per_label):
            clip = synth_fixture(KINDS[seed % len(KINDS)], seed=seed, onset=2048)
            write_wav_file(clip, d / f"{label}_{i:04d}.wav")
            seed += 1
    total = args.per_label * len(args.labels)
    print(f"wrote {total} clips under {root}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
