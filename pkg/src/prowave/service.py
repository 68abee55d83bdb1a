"""Self-hosted listening-test service.

Serves generated clips to the browser client, hands each participant a
seeded private shuffle of the sample set, and persists one JSON rating line
per judgment -- appended and fsynced before the request is acknowledged, so
every acknowledged rating survives a crash.  Aggregate results are always
recomputed from the persisted file, which is the single source of truth.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .evaluation import (
    RatingRecord,
    UndefinedEffectError,
    aggregate,
    cohens_d,
    effect_band,
    rating_to_json,
    read_ratings,
)

log = logging.getLogger(__name__)

SCALE = {"min": 1, "max": 7, "min_label": "not human", "max_label": "human"}

STATIC_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".ico": "image/x-icon",
}


class DuplicateRatingError(ValueError):
    pass


class UnknownSampleError(KeyError):
    pass


def opaque_sample_id(filename: str) -> str:
    """Stable participant-facing id that does not reveal the system tag."""
    return hashlib.sha1(filename.encode()).hexdigest()[:12]


class SampleRegistry:
    """Maps opaque ids to WAV files whose names carry `<system>_<index>.wav`."""

    def __init__(self, sample_dir: str | Path):
        self.sample_dir = Path(sample_dir)
        self.by_id: dict[str, tuple[Path, str]] = {}
        for path in sorted(self.sample_dir.glob("*.wav")):
            system = path.stem.split("_")[0]
            self.by_id[opaque_sample_id(path.name)] = (path, system)
        if not self.by_id:
            raise FileNotFoundError(f"no WAV samples under {self.sample_dir}")

    def system_of(self, sample_id: str) -> str:
        try:
            return self.by_id[sample_id][1]
        except KeyError:
            raise UnknownSampleError(sample_id) from None

    def wav_bytes(self, sample_id: str) -> bytes:
        try:
            path, _ = self.by_id[sample_id]
        except KeyError:
            raise UnknownSampleError(sample_id) from None
        return path.read_bytes()

    def playlist_for(self, participant: str) -> list[str]:
        """Private shuffle, seeded from the participant id for reproducibility."""
        ids = sorted(self.by_id)
        seed = int.from_bytes(hashlib.sha256(participant.encode()).digest()[:8], "big")
        order = np.random.default_rng(seed).permutation(len(ids))
        return [ids[i] for i in order]


class RatingStore:
    """Append-only JSON-lines store; duplicates per (participant, sample)
    are rejected; appends reach disk before being acknowledged."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._seen: set[tuple[str, str]] = set()
        if self.path.exists():
            for r in self.records():
                self._seen.add((r.participant_id, r.sample_id))

    def append(self, record: RatingRecord) -> None:
        key = (record.participant_id, record.sample_id)
        with self._lock:
            if key in self._seen:
                raise DuplicateRatingError(f"{key} already rated")
            with self.path.open("a") as f:
                f.write(rating_to_json(record) + "\n")
                f.flush()
                os.fsync(f.fileno())
            self._seen.add(key)

    def records(self) -> list[RatingRecord]:
        if not self.path.exists():
            return []
        records, skipped = read_ratings(self.path)
        for lineno, reason in skipped:
            log.warning("ratings file line %d unreadable: %s", lineno, reason)
        return records

    def rated_by(self, participant: str) -> list[str]:
        return [s for (p, s) in sorted(self._seen) if p == participant]


def results_payload(store: RatingStore) -> dict:
    records = store.records()
    if not records:
        return {"count": 0, "systems": {}, "cohens_d": None, "effect_band": None}
    stats = aggregate(records)
    payload = {
        "count": len(records),
        "systems": {name: {"n": s.n, "mean": s.mean, "std_dev": s.std_dev}
                    for name, s in stats.items()},
        "cohens_d": None,
        "effect_band": None,
    }
    names = sorted(stats)
    if len(names) == 2:
        try:
            d = cohens_d(stats[names[0]], stats[names[1]])
        except UndefinedEffectError:
            d = None
        if d is not None:
            payload["cohens_d"] = d
            payload["effect_band"] = effect_band(d)
    return payload


class _Handler(BaseHTTPRequestHandler):
    server: "ListeningServer"

    # --- helpers

    def _json(self, status: int, obj: dict) -> None:
        body = json.dumps(obj).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _bytes(self, status: int, body: bytes, ctype: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, fmt, *args):
        log.debug("http: " + fmt, *args)

    # --- routes

    def do_GET(self):
        url = urlparse(self.path)
        parts = [p for p in url.path.split("/") if p]
        if parts[:2] == ["api", "session"]:
            qs = parse_qs(url.query)
            participant = qs.get("participant", [""])[0] or uuid.uuid4().hex
            self._json(200, {
                "participant": participant,
                "samples": self.server.registry.playlist_for(participant),
                "rated": self.server.store.rated_by(participant),
                "scale": SCALE,
            })
        elif parts[:2] == ["api", "sample"] and len(parts) == 3:
            try:
                body = self.server.registry.wav_bytes(parts[2])
            except UnknownSampleError:
                self._json(404, {"error": f"unknown sample {parts[2]!r}"})
                return
            self._bytes(200, body, "audio/wav")
        elif parts[:2] == ["api", "results"]:
            self._json(200, results_payload(self.server.store))
        else:
            self._static(url.path)

    def do_POST(self):
        route = urlparse(self.path).path
        if route == "/api/metadata":
            self._metadata()
            return
        if route != "/api/rating":
            self._json(404, {"error": "unknown endpoint"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            obj = json.loads(self.rfile.read(length))
            participant = obj["participant"]
            sample = obj["sample"]
            score = obj["score"]
            if not isinstance(participant, str) or not participant:
                raise ValueError("participant must be a non-empty string")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            self._json(400, {"error": f"malformed rating: {exc}"})
            return
        try:
            system = self.server.registry.system_of(sample)
            record = RatingRecord(participant_id=participant, sample_id=sample,
                                  system=system, score=score, timestamp=time.time())
            self.server.store.append(record)
        except UnknownSampleError:
            self._json(404, {"error": f"unknown sample {sample!r}"})
            return
        except (ValueError, TypeError) as exc:
            if isinstance(exc, DuplicateRatingError):
                self._json(409, {"error": str(exc)})
            else:
                self._json(400, {"error": str(exc)})
            return
        self._json(201, {"status": "ok"})

    def _metadata(self) -> None:
        """Voluntary participant details; appended beside the ratings file."""
        try:
            length = int(self.headers.get("Content-Length", "0"))
            obj = json.loads(self.rfile.read(length))
            participant = obj["participant"]
            if not isinstance(participant, str) or not participant:
                raise ValueError("participant must be a non-empty string")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            self._json(400, {"error": f"malformed metadata: {exc}"})
            return
        line = json.dumps({"participant": participant,
                           "details": obj.get("details", {}),
                           "ts": time.time()}, sort_keys=True)
        path = self.server.store.path.with_name("metadata.jsonl")
        with self.server.store._lock:
            with path.open("a") as f:
                f.write(line + "\n")
                f.flush()
                os.fsync(f.fileno())
        self._json(201, {"status": "ok"})

    def _static(self, path: str) -> None:
        ui = self.server.ui_dir
        if ui is None:
            self._json(404, {"error": "no static assets configured"})
            return
        name = "index.html" if path in ("", "/") else path.lstrip("/")
        target = (ui / name).resolve()
        if not str(target).startswith(str(ui.resolve())) or not target.is_file():
            self._json(404, {"error": f"not found: {path}"})
            return
        ctype = STATIC_TYPES.get(target.suffix, "application/octet-stream")
        self._bytes(200, target.read_bytes(), ctype)


class ListeningServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr: tuple[str, int], registry: SampleRegistry,
                 store: RatingStore, ui_dir: str | Path | None = None):
        super().__init__(addr, _Handler)
        self.registry = registry
        self.store = store
        self.ui_dir = Path(ui_dir) if ui_dir else None


def make_server(sample_dir: str | Path, ratings_path: str | Path,
                bind: tuple[str, int] = ("127.0.0.1", 0),
                ui_dir: str | Path | None = None) -> ListeningServer:
    registry = SampleRegistry(sample_dir)
    store = RatingStore(ratings_path)
    return ListeningServer(bind, registry, store, ui_dir=ui_dir)
