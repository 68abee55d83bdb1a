#!/usr/bin/env python3
"""Spin up the listening-test service on demo data: twenty tagged WAV
samples (ten per system) plus the browser client, ready to rate at
http://127.0.0.1:8765/."""
import argparse
import tempfile
from pathlib import Path

import numpy as np

from prowave.audio import AudioClip, write_wav_file
from prowave.cli import main as cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bind", default="127.0.0.1:8765")
    ap.add_argument("--ui", default=str(Path(__file__).parent.parent / "frontend" / "dist"))
    args = ap.parse_args()

    work = Path(tempfile.mkdtemp(prefix="prowave-demo-"))
    samples = work / "samples"
    samples.mkdir()
    rng = np.random.default_rng(0)
    for system in ("baseline", "proposed"):
        for i in range(10):
            t = np.arange(16384) / 16000
            freq = rng.uniform(150, 900)
            noise = rng.uniform(0.2 if system == "baseline" else 0.02, 0.3)
            x = 0.6 * np.sin(2 * np.pi * freq * t) + rng.normal(0, noise, 16384)
            clip = AudioClip(np.clip(x, -1, 1).astype(np.float32))
            write_wav_file(clip, samples / f"{system}_{i:03d}.wav")

    print(f"demo data under {work}")
    return cli(["serve", "--samples", str(samples),
                "--ratings", str(work / "ratings.jsonl"),
                "--bind", args.bind, "--ui", args.ui])


if __name__ == "__main__":
    raise SystemExit(main())
