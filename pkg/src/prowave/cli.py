"""Command-line entry point: preprocess | train | generate | evaluate | serve.

Exit codes are a stable scripting contract: 0 success, 1 usage error,
2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
import uuid
from pathlib import Path

from .audio import (
    CLIP_SAMPLES,
    SAMPLE_RATE,
    EmptyDatasetError,
    NoSpeechError,
    TrimConfig,
    WavFormatError,
    fit_length,
    ingest_dataset,
    read_wav_file,
    write_wav_file,
)
from .autodiff import ParameterError, ShapeError
from .evaluation import (
    UndefinedEffectError,
    aggregate,
    cohens_d,
    effect_band,
    read_ratings,
    results_table,
)
from .models import Pipeline
from .service import make_server
from .training import (
    Checkpoint,
    CheckpointFormatError,
    TrainConfig,
    TrainingDiverged,
    generate,
    load_checkpoint,
    pipeline_from_checkpoints,
    save_checkpoint,
    train_progressive,
    train_stage,
    stage1_sampler,
    MetricsWriter,
)

log = logging.getLogger("prowave")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

DATA_ERRORS = (WavFormatError, EmptyDatasetError, NoSpeechError,
               CheckpointFormatError, ParameterError, ShapeError,
               UndefinedEffectError, FileNotFoundError, NotADirectoryError)


class UsageError(Exception):
    pass


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# config files: flat `key = value` lines, # comments


def parse_config_text(text: str) -> TrainConfig:
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown field {key!r}")
        ftype = fields[key].type
        try:
            if ftype in ("int", int):
                values[key] = int(val)
            elif ftype in ("float", float):
                values[key] = float(val)
            else:
                values[key] = val
        except ValueError:
            raise ConfigError(f"line {lineno}: field {key!r}: cannot parse {val!r}")
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> TrainConfig:
    return parse_config_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# run manifests


def write_manifest(run_dir: Path, dataset: Path, cfg: TrainConfig,
                   checkpoints: dict[str, str]) -> Path:
    for p in [dataset] + [run_dir / c for c in checkpoints.values()]:
        if not Path(p).exists():
            raise FileNotFoundError(f"manifest references missing path: {p}")
    manifest = {
        "experiment_id": uuid.uuid4().hex[:12],
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "dataset": str(dataset),
        "config": dataclasses.asdict(cfg),
        "checkpoints": checkpoints,
    }
    out = run_dir / "manifest.json"
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_preprocess(args) -> int:
    trim = TrimConfig(frame_length=args.frame, hop=args.hop,
                      threshold_fraction=args.threshold,
                      tail_trim=not args.no_tail_trim)
    clips, summary = ingest_dataset(args.in_dir, labels=set(args.labels) if args.labels else None,
                                    trim=trim, n_samples=args.length)
    out_root = Path(args.out_dir)
    counters: dict[str, int] = {}
    for clip in clips:
        label = clip.label or "unlabeled"
        d = out_root / label
        d.mkdir(parents=True, exist_ok=True)
        i = counters.get(label, 0)
        counters[label] = i + 1
        write_wav_file(clip, d / f"{label}_{i:05d}.wav")
    print(f"clips: {summary.clip_count}")
    print(f"mean_duration_s: {summary.mean_duration:.3f}")
    print(f"std_duration_s: {summary.std_duration:.3f}")
    for label in sorted(summary.per_label_counts):
        print(f"label {label}: {summary.per_label_counts[label]}")
    return EXIT_OK


def _load_training_dir(path: Path) -> list:
    """Load already-preprocessed WAVs (flat or one folder per label)."""
    wavs = sorted(path.rglob("*.wav"))
    if not wavs:
        raise EmptyDatasetError(f"no WAV files under {path}")
    clips = []
    for p in wavs:
        clip = read_wav_file(p)
        if clip.sample_rate != SAMPLE_RATE:
            raise WavFormatError(f"{p}: sample rate {clip.sample_rate} != "
                                 f"{SAMPLE_RATE}; resampling is out of scope")
        clips.append(fit_length(clip, CLIP_SAMPLES))
    return clips


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    data = _load_training_dir(Path(args.data))
    print(f"loaded {len(data)} clips from {args.data}")

    s1_final = run_dir / "stage1.ckpt"
    s1_partial = run_dir / "partial_wavegan.ckpt"
    s2_final = run_dir / "stage2.ckpt"
    s2_partial = run_dir / "partial_audio2audio.ckpt"

    stage1_done = stage1_init = stage2_init = None
    if args.resume:
        if s1_final.exists():
            stage1_done = load_checkpoint(s1_final)
            print(f"stage 1 already complete at {stage1_done.iteration} iterations")
        elif s1_partial.exists():
            stage1_init = load_checkpoint(s1_partial)
            print(f"resuming stage 1 from iteration {stage1_init.iteration}")
        if s2_partial.exists():
            stage2_init = load_checkpoint(s2_partial)
            print(f"resuming stage 2 from iteration {stage2_init.iteration}")

    checkpoints: dict[str, str] = {}
    if args.stage == "wavegan-only":
        metrics = MetricsWriter(run_dir / "metrics_stage1.csv")
        ck1 = stage1_done or train_stage("wavegan", data, cfg, init=stage1_init,
                                         metrics=metrics, checkpoint_dir=run_dir)
        save_checkpoint(ck1, s1_final)
        checkpoints["stage1"] = "stage1.ckpt"
    elif args.stage == "audio2audio":
        if not s1_final.exists():
            raise FileNotFoundError(f"{s1_final}: stage 1 checkpoint required "
                                    f"before refining")
        ck1 = load_checkpoint(s1_final)
        metrics = MetricsWriter(run_dir / "metrics_stage2.csv")
        ck2 = train_stage("audio2audio", data, cfg, init=stage2_init,
                          input_source=stage1_sampler(ck1), metrics=metrics,
                          checkpoint_dir=run_dir, seed_offset=1)
        save_checkpoint(ck2, s2_final)
        checkpoints = {"stage1": "stage1.ckpt", "stage2": "stage2.ckpt"}
    else:
        ck1, ck2 = train_progressive(cfg, data, run_dir=run_dir,
                                     stage1_init=stage1_init,
                                     stage2_init=stage2_init,
                                     stage1_done=stage1_done)
        checkpoints["stage1"] = "stage1.ckpt"
        if ck2 is not None:
            checkpoints["stage2"] = "stage2.ckpt"
    write_manifest(run_dir, Path(args.data), cfg, checkpoints)
    print(f"run complete; checkpoints under {run_dir}")
    return EXIT_OK


def cmd_generate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ck1 = load_checkpoint(args.stage1)
    systems: dict[str, Pipeline] = {"baseline": pipeline_from_checkpoints(ck1)}
    if args.stage2:
        ck2 = load_checkpoint(args.stage2)
        systems["proposed"] = pipeline_from_checkpoints(ck1, ck2)
    for system, pipe in systems.items():
        clips = generate(pipe, args.n, seed=args.seed,
                         noise_range=ck1.config.noise_range)
        for i, clip in enumerate(clips):
            write_wav_file(clip, out_dir / f"{system}_{i:03d}.wav")
    total = args.n * len(systems)
    print(f"wrote {total} clips to {out_dir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    records, skipped = read_ratings(args.ratings)
    for lineno, reason in skipped:
        print(f"warning: line {lineno} skipped: {reason}", file=sys.stderr)
    if not records:
        raise EmptyDatasetError(f"no usable ratings in {args.ratings}")
    stats = aggregate(records)
    if len(stats) < 2:
        raise EmptyDatasetError(
            f"need ratings for two systems, found {sorted(stats)}")
    names = sorted(stats)
    d = cohens_d(stats[names[0]], stats[names[1]])
    band = effect_band(d)
    for name in names:
        s = stats[name]
        print(f"{name}: n={s.n} mean={s.mean:.2f} std={s.std_dev:.2f}")
    print(f"cohens_d ({names[0]} -> {names[1]}): {d:.2f}")
    print(f"effect: {band}")
    if skipped:
        print(f"skipped {len(skipped)} malformed line(s)", file=sys.stderr)
    if args.export:
        Path(args.export).write_text(results_table(stats, d, band))
        print(f"exported {args.export}")
    return EXIT_OK


def cmd_serve(args) -> int:
    host, _, port = args.bind.rpartition(":")
    server = make_server(args.samples, args.ratings,
                         bind=(host or "127.0.0.1", int(port)),
                         ui_dir=args.ui)
    print(f"listening on http://{server.server_address[0]}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="prowave",
                description="progressive waveform GAN toolkit and rating service")
    sub = p.add_subparsers(dest="command", required=True)

    pp = sub.add_parser("preprocess", help="trim silence and fit clip lengths")
    pp.add_argument("in_dir")
    pp.add_argument("out_dir")
    pp.add_argument("--labels", nargs="*", default=None)
    pp.add_argument("--frame", type=int, default=512)
    pp.add_argument("--hop", type=int, default=256)
    pp.add_argument("--threshold", type=float, default=0.05)
    pp.add_argument("--length", type=int, default=CLIP_SAMPLES)
    pp.add_argument("--no-tail-trim", action="store_true")
    pp.set_defaults(fn=cmd_preprocess)

    pt = sub.add_parser("train", help="run adversarial training")
    pt.add_argument("--config", default=None)
    pt.add_argument("--data", required=True)
    pt.add_argument("--out", required=True)
    pt.add_argument("--seed", type=int, default=None)
    pt.add_argument("--resume", action="store_true")
    pt.add_argument("--stage", choices=["both", "wavegan-only", "audio2audio"],
                    default="both")
    pt.set_defaults(fn=cmd_train)

    pg = sub.add_parser("generate", help="synthesize clips from checkpoints")
    pg.add_argument("--stage1", required=True)
    pg.add_argument("--stage2", default=None)
    pg.add_argument("--n", type=int, default=10)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--out", required=True)
    pg.set_defaults(fn=cmd_generate)

    pe = sub.add_parser("evaluate", help="aggregate ratings and effect size")
    pe.add_argument("ratings")
    pe.add_argument("--export", default=None)
    pe.set_defaults(fn=cmd_evaluate)

    ps = sub.add_parser("serve", help="run the listening-test service")
    ps.add_argument("--samples", required=True)
    ps.add_argument("--ratings", required=True)
    ps.add_argument("--bind", default="127.0.0.1:8765")
    ps.add_argument("--ui", default=None)
    ps.set_defaults(fn=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - catch-all for the contract
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
