"""WAV ingestion and export, energy-based silence trimming, length fitting,
and dataset loading with duration statistics."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SAMPLE_RATE = 16_000
CLIP_SAMPLES = 16_384
PCM_SCALE = 32_768


class WavFormatError(ValueError):
    """Container violates the RIFF/PCM subset we accept; names the field."""


class NoSpeechError(ValueError):
    """Signal contains no frame above the silence threshold."""


class EmptyDatasetError(ValueError):
    pass


@dataclass
class AudioClip:
    """Fixed-rate mono waveform with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    label: str | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be 1-d, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class TrimConfig:
    """Framing and threshold settings for energy-based trimming.

    ``threshold_fraction`` is relative to the clip's own maximum frame
    energy, which makes trimming amplitude-invariant.
    """

    frame_length: int = 512
    hop: int = 256
    threshold_fraction: float = 0.05
    tail_trim: bool = True

    def __post_init__(self):
        if not 0 < self.hop <= self.frame_length:
            raise ValueError(f"need 0 < hop <= frame_length, got hop={self.hop}, "
                             f"frame_length={self.frame_length}")
        if not 0 < self.threshold_fraction <= 1:
            raise ValueError(f"threshold_fraction must be in (0, 1], got "
                             f"{self.threshold_fraction}")


@dataclass
class DatasetSummary:
    clip_count: int
    mean_duration: float
    std_duration: float
    per_label_counts: dict[str, int] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# WAV container


def read_wav(data: bytes) -> AudioClip:
    """Parse a mono 16-bit PCM RIFF/WAVE file into [-1, 1] samples."""
    if len(data) < 12 or data[0:4] != b"RIFF":
        raise WavFormatError("missing RIFF magic in header")
    if data[8:12] != b"WAVE":
        raise WavFormatError("RIFF form type is not WAVE")

    fmt = None
    pcm = None
    sample_rate = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"chunk {cid!r} truncated: declared {size} bytes, "
                                 f"got {len(body)}")
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError("fmt chunk shorter than 16 bytes")
            audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", body)
            if audio_format != 1:
                raise WavFormatError(f"AudioFormat must be 1 (PCM), got {audio_format}")
            if channels != 1:
                raise WavFormatError(f"NumChannels must be 1 (mono), got {channels}")
            if bits != 16:
                raise WavFormatError(f"BitsPerSample must be 16, got {bits}")
            sample_rate = rate
            fmt = True
        elif cid == b"data":
            pcm = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None:
        raise WavFormatError("missing fmt chunk")
    if pcm is None:
        raise WavFormatError("missing data chunk")
    if len(pcm) % 2 != 0:
        raise WavFormatError(f"data chunk length {len(pcm)} is not a whole number "
                             f"of 16-bit samples")
    ints = np.frombuffer(pcm, dtype="<i2")
    samples = ints.astype(np.float32) / PCM_SCALE
    return AudioClip(samples, sample_rate=sample_rate)


def write_wav(clip: AudioClip) -> bytes:
    """Serialize to mono 16-bit PCM; out-of-range samples are clamped."""
    x = np.clip(clip.samples.astype(np.float64) * PCM_SCALE, -PCM_SCALE, PCM_SCALE - 1)
    # round half away from zero, unlike numpy's banker's rounding
    ints = np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5)).astype("<i2")
    pcm = ints.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE",
        b"fmt ", 16, 1, 1, clip.sample_rate, clip.sample_rate * 2, 2, 16,
        b"data", len(pcm),
    )
    return header + pcm


def read_wav_file(path: str | Path) -> AudioClip:
    return read_wav(Path(path).read_bytes())


def write_wav_file(clip: AudioClip, path: str | Path) -> None:
    Path(path).write_bytes(write_wav(clip))


# ---------------------------------------------------------------------------
# short-term energy and trimming


def short_term_energy(clip: AudioClip, cfg: TrimConfig) -> np.ndarray:
    """Per-frame mean squared amplitude; frames start at f*hop, last frame
    zero-padded.  Returns ceil(len/hop) energies."""
    x = clip.samples
    if len(x) == 0:
        raise ValueError("empty clip")
    n_frames = -(-len(x) // cfg.hop)
    padded = np.zeros((n_frames - 1) * cfg.hop + cfg.frame_length, dtype=np.float64)
    padded[:len(x)] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.frame_length)[::cfg.hop]
    return (frames ** 2).mean(axis=1)


def trim_onset(clip: AudioClip, cfg: TrimConfig | None = None) -> AudioClip:
    """Drop samples before the first frame whose energy reaches the threshold
    (and, with tail_trim, after the last such frame)."""
    cfg = cfg or TrimConfig()
    energy = short_term_energy(clip, cfg)
    peak = float(energy.max())
    if peak <= 0.0:
        raise NoSpeechError("no speech detected: all frames have zero energy")
    threshold = cfg.threshold_fraction * peak
    active = np.flatnonzero(energy >= threshold)
    start = int(active[0]) * cfg.hop
    if cfg.tail_trim:
        end = min(len(clip), int(active[-1]) * cfg.hop + cfg.frame_length)
    else:
        end = len(clip)
    return AudioClip(clip.samples[start:end], clip.sample_rate, clip.label)


def fit_length(clip: AudioClip, n: int = CLIP_SAMPLES) -> AudioClip:
    """Truncate or right-pad with zeros to exactly n samples."""
    if n <= 0:
        raise ValueError(f"target length must be positive, got {n}")
    x = clip.samples
    if len(x) >= n:
        out = x[:n]
    else:
        out = np.zeros(n, dtype=np.float32)
        out[:len(x)] = x
    return AudioClip(out, clip.sample_rate, clip.label)


# ---------------------------------------------------------------------------
# dataset loading


def ingest_dataset(root: str | Path, labels: set[str] | None = None,
                   trim: TrimConfig | None = None,
                   n_samples: int = CLIP_SAMPLES) -> tuple[list[AudioClip], DatasetSummary]:
    """Load ``<root>/<label>/*.wav``, trim and length-fit every clip.

    Duration statistics are computed over the original (untrimmed) clips.
    Unreadable files are skipped with a warning; an empty result is an error.
    """
    root = Path(root)
    trim = trim or TrimConfig()
    clips: list[AudioClip] = []
    durations: list[float] = []
    per_label: dict[str, int] = {}
    label_dirs = sorted(d for d in root.iterdir() if d.is_dir()) if root.is_dir() else []
    for d in label_dirs:
        if labels is not None and d.name not in labels:
            continue
        for path in sorted(d.glob("*.wav")):
            try:
                clip = read_wav_file(path)
                clip.label = d.name
                original_duration = clip.duration
                clip = fit_length(trim_onset(clip, trim), n_samples)
            except (WavFormatError, NoSpeechError, OSError) as exc:
                log.warning("skipping %s: %s", path, exc)
                continue
            durations.append(original_duration)
            clips.append(clip)
            per_label[d.name] = per_label.get(d.name, 0) + 1
    if not clips:
        raise EmptyDatasetError(f"no usable clips under {root}")
    dur = np.asarray(durations)
    std = float(dur.std(ddof=1)) if len(dur) > 1 else 0.0
    summary = DatasetSummary(
        clip_count=len(clips),
        mean_duration=float(dur.mean()),
        std_duration=std,
        per_label_counts=per_label,
    )
    return clips, summary


# ---------------------------------------------------------------------------
# synthetic desk fixtures


def synth_fixture(kind: str, seed: int = 0, onset: int = 4096,
                  sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """Deterministic one-second test clip: tone, chirp, or silence+tone."""
    rng = np.random.default_rng(seed)
    n = sample_rate
    t = np.arange(n) / sample_rate
    if kind == "tone":
        freq = float(rng.uniform(100, 1000))
        amp = float(rng.uniform(0.3, 0.9))
        x = amp * np.sin(2 * np.pi * freq * t)
    elif kind == "chirp":
        f0 = float(rng.uniform(50, 200))
        f1 = float(rng.uniform(1000, 4000))
        phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t * t)
        x = 0.9 * np.sin(phase)
    elif kind == "silence+tone":
        freq = float(rng.uniform(100, 1000))
        amp = float(rng.uniform(0.3, 0.9))
        x = amp * np.sin(2 * np.pi * freq * t)
        x[:onset] = 0.0
    else:
        raise ValueError(f"unknown fixture kind {kind!r}")
    return AudioClip(x.astype(np.float32), sample_rate)
