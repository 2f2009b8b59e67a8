"""Session recording and replay.

Container: newline-delimited JSON, one header line then one line per frame,
with pixel payloads zlib-compressed raw RGB in base64 (lossless). Detection
overlays are baked into the stored pixels; a sidecar log (same line format
as detections.log) carries the detections so a replay through the playback
backend reproduces the log byte-for-byte.
"""

from __future__ import annotations

import base64
import json
import time
import zlib
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ..frames import FrameRecord
from ..metrics import Detection
from . import logfmt
from .sources import CLASS_COLORS, FrameSource, SourceUnavailable

RECORDING_FORMAT = "jsonl+zlib-rgb24"


class CorruptArtifact(Exception):
    pass


def draw_boxes(pixels: np.ndarray, detections: Sequence[Detection], thickness: int = 2) -> np.ndarray:
    """Return a copy of the frame with detection rectangles burned in."""
    out = pixels.copy()
    h, w = out.shape[:2]
    for det in detections:
        x1, y1, x2, y2 = det.box.corners()
        c0 = max(int(round(x1 * w)), 0)
        r0 = max(int(round(y1 * h)), 0)
        c1 = min(int(round(x2 * w)), w)
        r1 = min(int(round(y2 * h)), h)
        if c1 <= c0 or r1 <= r0:
            continue
        color = CLASS_COLORS[det.box.class_id % len(CLASS_COLORS)]
        t = thickness
        out[r0 : min(r0 + t, r1), c0:c1] = color
        out[max(r1 - t, r0) : r1, c0:c1] = color
        out[r0:r1, c0 : min(c0 + t, c1)] = color
        out[r0:r1, max(c1 - t, c0) : c1] = color
    return out


def _encode_pixels(pixels: np.ndarray) -> str:
    return base64.b64encode(zlib.compress(pixels.tobytes(), level=6)).decode("ascii")


def _decode_pixels(payload: str, width: int, height: int) -> np.ndarray:
    raw = zlib.decompress(base64.b64decode(payload))
    return np.frombuffer(raw, dtype=np.uint8).reshape((height, width, 3))


class Recorder:
    """Writes one recording file plus its sidecar detection log."""

    def __init__(self, path: Path | str, resolution: tuple[int, int], class_names: Sequence[str]):
        self.path = Path(path)
        self.sidecar_path = self.path.with_suffix(self.path.suffix + ".log")
        self._file = self.path.open("w", encoding="utf-8")
        self._sidecar = self.sidecar_path.open("w", encoding="utf-8")
        self.frame_count = 0
        header = {
            "type": "header",
            "format": RECORDING_FORMAT,
            "width": resolution[0],
            "height": resolution[1],
            "class_names": list(class_names),
        }
        self._file.write(logfmt.dumps(header) + "\n")

    def write(self, frame: FrameRecord, detections: Sequence[Detection]) -> None:
        pixels = None
        if frame.pixels is not None:
            pixels = _encode_pixels(draw_boxes(frame.pixels, detections))
        doc = {
            "type": "frame",
            "frame_id": frame.frame_id,
            "timestamp_ns": frame.timestamp_ns,
            "width": frame.width,
            "height": frame.height,
            "pixels": pixels,
            "truths": None
            if frame.truths is None
            else [logfmt.box_to_dict(b) for b in frame.truths],
        }
        self._file.write(logfmt.dumps(doc) + "\n")
        self._sidecar.write(logfmt.log_line(frame.frame_id, detections) + "\n")
        self.frame_count += 1

    def close(self) -> None:
        self._file.close()
        self._sidecar.close()


def read_recording_header(path: Path | str) -> dict:
    with Path(path).open("r", encoding="utf-8") as f:
        first = f.readline()
    try:
        header = json.loads(first)
    except json.JSONDecodeError as e:
        raise CorruptArtifact(f"{path}: bad header line: {e}") from e
    if header.get("type") != "header":
        raise CorruptArtifact(f"{path}: first line is not a header")
    return header


def iterate_recording(path: Path | str) -> Iterator[FrameRecord]:
    """Yield the recorded frames (pixels decoded, truths restored)."""
    with Path(path).open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorruptArtifact(f"{path}:{line_no}: bad line: {e}") from e
            if doc.get("type") != "frame":
                continue
            pixels = None
            if doc.get("pixels"):
                pixels = _decode_pixels(doc["pixels"], doc["width"], doc["height"])
            truths = None
            if doc.get("truths") is not None:
                truths = tuple(logfmt.box_from_dict(b) for b in doc["truths"])
            yield FrameRecord(
                frame_id=doc["frame_id"],
                timestamp_ns=doc["timestamp_ns"],
                width=doc["width"],
                height=doc["height"],
                pixels=pixels,
                truths=truths,
            )


def load_sidecar_log(path: Path | str) -> dict[int, list[Detection]]:
    """Parse a detection log into a frame_id -> detections map."""
    out: dict[int, list[Detection]] = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            frame_id, dets, dropped = logfmt.parse_log_line(line)
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise CorruptArtifact(f"{path}:{line_no}: bad log line: {e}") from e
        if not dropped:
            out[frame_id] = dets
    return out


class RecordingReplaySource(FrameSource):
    """Replays a recording's frames; original timestamps set the pacing."""

    def __init__(self, path: Path | str, speed: float = 1.0):
        if speed <= 0:
            raise ValueError("speed must be positive")
        self.path = Path(path)
        if not self.path.is_file():
            raise SourceUnavailable(f"recording not found: {self.path}")
        header = read_recording_header(self.path)
        self.resolution = (header["width"], header["height"])
        self.class_names = header.get("class_names", [])
        self.speed = speed
        self.fps = None  # paced by recorded timestamps

    def frames(self) -> Iterator[FrameRecord]:
        start_ns: int | None = None
        first_recorded: int | None = None
        for rec in iterate_recording(self.path):
            now = time.monotonic_ns()
            if start_ns is None:
                start_ns = now
                first_recorded = rec.timestamp_ns
            else:
                due = start_ns + int((rec.timestamp_ns - first_recorded) / self.speed)
                delay = (due - now) / 1e9
                if delay > 0:
                    time.sleep(delay)
            yield FrameRecord(
                frame_id=rec.frame_id,
                timestamp_ns=time.monotonic_ns(),
                width=rec.width,
                height=rec.height,
                pixels=rec.pixels,
                truths=rec.truths,
            )
