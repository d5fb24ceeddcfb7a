"""Review-loop service: serves the triage queue to an annotation client,
persists human corrections, and assembles the retraining dataset.

State is a fold over an append-only JSON-lines correction log plus the
posted mask PNGs stored verbatim, so a restart (or an independent replay)
reconstructs exactly the same state and resubmitting identical bytes is a
no-op.  The source dataset is never modified.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import re
import shutil
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
from PIL import Image

from .pipeline import MANIFEST_NAME, DatasetManifest

API_VERSION_HEADER = ("tcupgan-api", "1")
LOG_NAME = "corrections.jsonl"


@dataclass
class CorrectionRecord:
    """One accepted human correction; append-only, newest supersedes."""

    correction_id: str
    cube_id: str
    slice_index: int
    author: str
    submitted_at: float
    mask_file: str
    supersedes: str | None = None

    def to_json(self) -> dict:
        return {
            "correction_id": self.correction_id,
            "cube_id": self.cube_id,
            "slice_index": self.slice_index,
            "author": self.author,
            "submitted_at": self.submitted_at,
            "mask_file": self.mask_file,
            "supersedes": self.supersedes,
        }


@dataclass
class QueueItem:
    record: dict
    broken: bool = False
    corrected: bool = False

    @property
    def key(self) -> tuple[str, int]:
        return (self.record["cube_id"], self.record["slice_index"])

    def view(self) -> dict:
        out = dict(self.record)
        out["status"] = "corrected" if self.corrected else "pending"
        out["broken"] = self.broken
        return out


def _decode_mask_png(data: bytes) -> tuple[np.ndarray, tuple[int, int]]:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise ValueError(f"not a decodable PNG: {exc}") from exc
    if img.mode != "L":
        raise ValueError(f"mask PNG must be 8-bit grayscale, got mode {img.mode}")
    arr = np.asarray(img)
    if not np.isin(arr, (0, 255)).all():
        raise ValueError("mask PNG must contain only 0 and 255")
    return arr, (img.height, img.width)


class ReviewService:
    """Queue state plus correction log; all writes go through one lock."""

    def __init__(self, queue_path, dataset: DatasetManifest | str | Path, state_dir):
        queue_path = Path(queue_path)
        self.queue_dir = queue_path.parent
        self.dataset = (dataset if isinstance(dataset, DatasetManifest)
                        else DatasetManifest.load(dataset))
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        (self.state_dir / "masks").mkdir(exist_ok=True)
        self._lock = threading.Lock()

        self.items: list[QueueItem] = []
        self.by_key: dict[tuple[str, int], QueueItem] = {}
        for line in queue_path.read_text().splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            item = QueueItem(record=record)
            item.broken = not all(
                (self.queue_dir / record[k]).exists()
                for k in ("image", "machine_mask", "heatmap")
            )
            self.items.append(item)
            self.by_key[item.key] = item

        # fold the append-only log into memory
        self.log: list[CorrectionRecord] = []
        self.latest: dict[tuple[str, int], CorrectionRecord] = {}
        self._known_ids: set[str] = set()
        log_path = self.log_path
        if log_path.exists():
            for line in log_path.read_text().splitlines():
                if line.strip():
                    rec = CorrectionRecord(**json.loads(line))
                    self._apply(rec)

    @property
    def log_path(self) -> Path:
        return self.state_dir / LOG_NAME

    def _apply(self, rec: CorrectionRecord) -> None:
        self.log.append(rec)
        self._known_ids.add(rec.correction_id)
        self.latest[(rec.cube_id, rec.slice_index)] = rec
        item = self.by_key.get((rec.cube_id, rec.slice_index))
        if item is not None:
            item.corrected = True

    # --- queue ------------------------------------------------------------

    def queue_view(self, status: str | None = None, limit: int | None = None) -> list[dict]:
        views = [item.view() for item in self.items]
        if status:
            views = [v for v in views if v["status"] == status]
        if limit is not None:
            views = views[:max(0, limit)]
        return views

    def _expected_dims(self, item: QueueItem) -> tuple[int, int]:
        entry = self.dataset.entry(item.record["cube_id"])
        with Image.open(self.dataset.root / entry.slices[item.record["slice_index"]]) as img:
            return (img.height, img.width)

    # --- corrections --------------------------------------------------------

    def ingest_correction(self, cube_id: str, slice_index: int, author: str,
                          mask_bytes: bytes) -> str:
        """Validate and append a correction; idempotent on identical bytes."""
        with self._lock:
            item = self.by_key.get((cube_id, slice_index))
            if item is None:
                raise KeyError(f"slice ({cube_id}, {slice_index}) is not in the review queue")
            _, dims = _decode_mask_png(mask_bytes)
            expected = self._expected_dims(item)
            if dims != expected:
                raise ValueError(
                    f"mask dimensions {dims} do not match expected {expected}"
                )
            digest = hashlib.sha256(
                f"{cube_id}|{slice_index}|".encode() + mask_bytes
            ).hexdigest()[:16]
            correction_id = f"corr-{digest}"
            if correction_id in self._known_ids:
                return correction_id

            mask_file = f"masks/{correction_id}.png"
            (self.state_dir / mask_file).write_bytes(mask_bytes)
            prior = self.latest.get((cube_id, slice_index))
            rec = CorrectionRecord(
                correction_id=correction_id,
                cube_id=cube_id,
                slice_index=slice_index,
                author=author,
                submitted_at=time.time(),
                mask_file=mask_file,
                supersedes=prior.correction_id if prior else None,
            )
            with open(self.log_path, "a") as fh:
                fh.write(json.dumps(rec.to_json()) + "\n")
            self._apply(rec)
            return correction_id

    def latest_correction_bytes(self, cube_id: str, slice_index: int) -> bytes | None:
        rec = self.latest.get((cube_id, slice_index))
        if rec is None:
            return None
        return (self.state_dir / rec.mask_file).read_bytes()

    # --- assets ----------------------------------------------------------------

    def asset_bytes(self, cube_id: str, slice_index: int, kind: str) -> bytes:
        item = self.by_key.get((cube_id, slice_index))
        if item is None:
            raise KeyError(f"slice ({cube_id}, {slice_index}) is not in the review queue")
        if kind == "mask":
            corrected = self.latest_correction_bytes(cube_id, slice_index)
            if corrected is not None:
                return corrected
            kind_key = "machine_mask"
        elif kind in ("image", "heatmap"):
            kind_key = kind
        else:
            raise KeyError(f"unknown asset kind {kind!r}")
        path = self.queue_dir / item.record[kind_key]
        if not path.exists():
            raise FileNotFoundError(f"asset missing: {path}")
        return path.read_bytes()

    # --- retrain export ------------------------------------------------------------

    def export_retrain_manifest(self, out_dir) -> dict:
        return export_retrain_manifest(self.dataset, self.log, self.state_dir, out_dir)


def export_retrain_manifest(dataset: DatasetManifest, log: list[CorrectionRecord],
                            state_dir, out_dir) -> dict:
    """New dataset directory where each corrected slice's mask is replaced by
    its latest correction; uncorrected slices keep their original masks."""
    if not log:
        raise ValueError("no corrections to export")
    state_dir = Path(state_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    latest: dict[tuple[str, int], CorrectionRecord] = {}
    for rec in log:
        latest[(rec.cube_id, rec.slice_index)] = rec

    replaced = []
    cubes = []
    for entry in dataset.cubes:
        mask_rels = []
        for rel in entry.slices:
            dst = out_dir / rel
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(dataset.root / rel, dst)
        for idx, rel in enumerate(entry.masks):
            dst = out_dir / rel
            dst.parent.mkdir(parents=True, exist_ok=True)
            rec = latest.get((entry.cube_id, idx))
            if rec is not None:
                shutil.copyfile(state_dir / rec.mask_file, dst)
                replaced.append(f"{entry.cube_id}:{idx}")
            else:
                shutil.copyfile(dataset.root / rel, dst)
            mask_rels.append(rel)
        cubes.append({"cube_id": entry.cube_id, "slices": list(entry.slices), "masks": mask_rels})

    payload = {
        "version": dataset.version,
        "slice_depth": dataset.slice_depth,
        "notes": dataset.notes + [f"corrected slices: {', '.join(replaced)}"],
        "cubes": cubes,
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(payload, indent=2))
    return payload


# --- HTTP layer ---------------------------------------------------------------

_SLICE_RE = re.compile(r"^/api/slices/([^/]+(?:/[^/]+)*)/(\d+)/(image|mask|heatmap)$")


def _make_handler(service: ReviewService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        def _respond(self, code: int, body: bytes, content_type: str) -> None:
            self.send_response(code)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header(*API_VERSION_HEADER)
            self.end_headers()
            self.wfile.write(body)

        def _json(self, payload, code: int = 200) -> None:
            self._respond(code, json.dumps(payload).encode(), "application/json")

        def _error(self, code: int, message: str) -> None:
            self._json({"error": message}, code=code)

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.send_header(*API_VERSION_HEADER)
            self.end_headers()

        def do_GET(self):
            path, _, query = self.path.partition("?")
            try:
                if path == "/api/health":
                    self._json({"status": "ok"})
                elif path == "/api/queue":
                    params = dict(
                        part.split("=", 1) for part in query.split("&") if "=" in part
                    )
                    limit = params.get("limit")
                    items = service.queue_view(
                        status=params.get("status") or None,
                        limit=int(limit) if limit else None,
                    )
                    self._json({"items": items})
                elif path == "/api/export":
                    payload = service.export_retrain_manifest(service.state_dir / "retrain")
                    self._json(payload)
                elif m := _SLICE_RE.match(path):
                    cube_id, idx, kind = m.group(1), int(m.group(2)), m.group(3)
                    data = service.asset_bytes(cube_id, idx, kind)
                    self._respond(200, data, "image/png")
                else:
                    self._error(404, f"unknown path {path}")
            except (KeyError, FileNotFoundError) as exc:
                self._error(404, str(exc))
            except ValueError as exc:
                self._error(400, str(exc))

        def do_POST(self):
            try:
                if self.path.partition("?")[0] != "/api/corrections":
                    self._error(404, f"unknown path {self.path}")
                    return
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length) or b"{}")
                for field_name in ("cube_id", "slice_index", "mask_png_base64"):
                    if field_name not in body:
                        self._error(400, f"missing field {field_name}")
                        return
                mask_bytes = base64.b64decode(body["mask_png_base64"])
                correction_id = service.ingest_correction(
                    cube_id=str(body["cube_id"]),
                    slice_index=int(body["slice_index"]),
                    author=str(body.get("author", "anonymous")),
                    mask_bytes=mask_bytes,
                )
                self._json({"correction_id": correction_id})
            except KeyError as exc:
                self._error(404, str(exc))
            except ValueError as exc:
                self._error(400, str(exc))

    return Handler


def serve(queue_path, dataset, state_dir, host: str = "127.0.0.1",
          port: int = 8715) -> tuple[ThreadingHTTPServer, ReviewService]:
    """Build the HTTP server (not yet running); call serve_forever() on it."""
    service = ReviewService(queue_path, dataset, state_dir)
    server = ThreadingHTTPServer((host, port), _make_handler(service))
    return server, service
