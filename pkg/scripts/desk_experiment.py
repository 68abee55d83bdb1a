#!/usr/bin/env python3
"""Desk-scale end-to-end experiment: synthetic corpus -> preprocess ->
two-stage adversarial training -> clip generation -> signal diagnostics.

With the defaults this finishes in a few minutes on a laptop CPU; pass
--iters1/--iters2 to scale up towards the canonical schedule."""
import argparse
import tempfile
from pathlib import Path

from prowave.audio import read_wav_file
from prowave.cli import main as cli
from prowave.evaluation import clip_diagnostics


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work-dir", default=None)
    ap.add_argument("--clips", type=int, default=34, help="fixtures per label")
    ap.add_argument("--iters1", type=int, default=200)
    ap.add_argument("--iters2", type=int, default=50)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    work = Path(args.work_dir or tempfile.mkdtemp(prefix="prowave-desk-"))
    raw = work / "raw"
    processed = work / "processed"
    run = work / "run"
    gen = work / "generated"

    from make_fixture_corpus import main as make_corpus  # noqa: F401  (same dir)
    import sys
    sys.argv = ["make_fixture_corpus", str(raw), "--per-label", str(args.clips)]
    make_corpus()

    assert cli(["preprocess", str(raw), str(processed)]) == 0

    config = work / "config.txt"
    config.write_text(
        f"stage1_iters = {args.iters1}\n"
        f"stage2_iters = {args.iters2}\n"
        "model_dim = 1\n"
        "batch_size = 8\n"
        f"seed = {args.seed}\n"
    )
    assert cli(["train", "--config", str(config), "--data", str(processed),
                "--out", str(run)]) == 0
    assert cli(["generate", "--stage1", str(run / "stage1.ckpt"),
                "--stage2", str(run / "stage2.ckpt"),
                "--n", "10", "--seed", str(args.seed), "--out", str(gen)]) == 0

    clips = [read_wav_file(p) for p in sorted(gen.glob("*.wav"))]
    names = [p.name for p in sorted(gen.glob("*.wav"))]
    print("\nper-clip diagnostics:")
    for name, diag in zip(names, clip_diagnostics(clips)):
        print(f"  {name}: peak={diag['peak']:.3f} rms={diag['rms']:.3f} "
              f"dc={diag['dc_offset']:+.4f} silence={diag['silence_ratio']:.2f}")
    print(f"\nartifacts under {work}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
