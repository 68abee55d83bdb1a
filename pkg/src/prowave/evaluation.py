"""Likert-rating aggregation, standardized effect size, and simple signal
diagnostics for generated clips."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .audio import AudioClip, TrimConfig, short_term_energy

SCORE_MIN, SCORE_MAX = 1, 7
SILENCE_ENERGY = 1e-4


class UndefinedEffectError(ValueError):
    """Effect size is undefined because the pooled deviation is zero."""


@dataclass(frozen=True)
class RatingRecord:
    participant_id: str
    sample_id: str
    system: str
    score: int
    timestamp: float = 0.0

    def __post_init__(self):
        if not isinstance(self.score, int) or isinstance(self.score, bool):
            raise ValueError(f"score must be an integer, got {self.score!r}")
        if not SCORE_MIN <= self.score <= SCORE_MAX:
            raise ValueError(f"score must lie in [{SCORE_MIN}, {SCORE_MAX}], "
                             f"got {self.score}")


@dataclass(frozen=True)
class SystemStats:
    system: str
    n: int
    mean: float
    std_dev: float  # sample standard deviation (n-1); 0 for a single rating


def aggregate(ratings: list[RatingRecord]) -> dict[str, SystemStats]:
    """Exact mean and sample standard deviation per system."""
    if not ratings:
        raise ValueError("no ratings to aggregate")
    by_system: dict[str, list[int]] = {}
    for r in ratings:
        by_system.setdefault(r.system, []).append(r.score)
    out = {}
    for system in sorted(by_system):
        scores = np.asarray(by_system[system], dtype=np.float64)
        std = float(scores.std(ddof=1)) if len(scores) > 1 else 0.0
        out[system] = SystemStats(system=system, n=len(scores),
                                  mean=float(scores.mean()), std_dev=std)
    return out


def cohens_d(a: SystemStats, b: SystemStats) -> float:
    """Standardized mean difference (b - a) / pooled std, the equal-group-size
    pooled form; positive when b scores higher than a."""
    pooled = math.sqrt((a.std_dev ** 2 + b.std_dev ** 2) / 2.0)
    if pooled == 0.0:
        raise UndefinedEffectError("both groups have zero standard deviation")
    return (b.mean - a.mean) / pooled


def effect_band(d: float) -> str:
    """Conventional magnitude bands for a standardized effect size."""
    m = abs(d)
    if m < 0.2:
        return "negligible"
    if m < 0.5:
        return "small"
    if m < 0.8:
        return "medium"
    return "large"


def clip_diagnostics(clips: list[AudioClip], frame_length: int = 512,
                     hop: int = 256) -> list[dict[str, float]]:
    """Deterministic per-clip statistics: peak, rms, dc offset, and the
    fraction of frames quieter than the silence energy floor."""
    cfg = TrimConfig(frame_length=frame_length, hop=hop)
    out = []
    for clip in clips:
        x = clip.samples.astype(np.float64)
        energy = short_term_energy(clip, cfg)
        out.append({
            "peak": float(np.max(np.abs(x))) if len(x) else 0.0,
            "rms": float(np.sqrt(np.mean(x ** 2))) if len(x) else 0.0,
            "dc_offset": float(np.mean(x)) if len(x) else 0.0,
            "silence_ratio": float(np.mean(energy < SILENCE_ENERGY)),
        })
    return out


# ---------------------------------------------------------------------------
# ratings file format: one JSON object per line


def rating_to_json(r: RatingRecord) -> str:
    return json.dumps({"participant": r.participant_id, "sample": r.sample_id,
                       "system": r.system, "score": r.score, "ts": r.timestamp},
                      sort_keys=True)


def rating_from_json(line: str) -> RatingRecord:
    obj = json.loads(line)
    return RatingRecord(participant_id=obj["participant"], sample_id=obj["sample"],
                        system=obj["system"], score=obj["score"],
                        timestamp=float(obj.get("ts", 0.0)))


def read_ratings(path) -> tuple[list[RatingRecord], list[tuple[int, str]]]:
    """Parse a JSON-lines ratings file; malformed lines are collected as
    (line number, reason) instead of aborting."""
    records: list[RatingRecord] = []
    skipped: list[tuple[int, str]] = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(rating_from_json(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                skipped.append((lineno, str(exc)))
    return records, skipped


def results_table(stats: dict[str, SystemStats], d: float | None,
                  band: str | None) -> str:
    """Comma-separated export with one row per system: network, n, mean
    score, std dev, effect size."""
    lines = ["network,n,mean_score,std_dev,cohens_d"]
    dtxt = "" if d is None else f"{d:.4f}"
    for name in sorted(stats):
        s = stats[name]
        lines.append(f"{name},{s.n},{s.mean:.4f},{s.std_dev:.4f},{dtxt}")
    if band is not None:
        lines.append(f"effect_band,,,,{band}")
    return "\n".join(lines) + "\n"
