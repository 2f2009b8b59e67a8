"""Canonical serialization for detection logs and stream messages.

Lines are JSON with sorted keys and no whitespace. Floats serialize via
repr (shortest round-trip form), so parse -> emit reproduces a line
byte-for-byte; replay determinism depends on this.
"""

from __future__ import annotations

import json
from typing import Sequence

from ..annotations import BoundingBox
from ..metrics import Detection


def detection_to_dict(det: Detection) -> dict:
    return {
        "class": det.box.class_id,
        "cx": det.box.cx,
        "cy": det.box.cy,
        "w": det.box.w,
        "h": det.box.h,
        "conf": det.confidence,
    }


def detection_from_dict(doc: dict, frame_id: int | None = None) -> Detection:
    box = BoundingBox(doc["class"], doc["cx"], doc["cy"], doc["w"], doc["h"])
    return Detection(box, doc["conf"], frame_id)


def box_to_dict(box: BoundingBox) -> dict:
    return {"class": box.class_id, "cx": box.cx, "cy": box.cy, "w": box.w, "h": box.h}


def box_from_dict(doc: dict) -> BoundingBox:
    return BoundingBox(doc["class"], doc["cx"], doc["cy"], doc["w"], doc["h"])


def dumps(doc: dict) -> str:
    """One canonical JSON line (no trailing newline)."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def log_line(frame_id: int, detections: Sequence[Detection], dropped: bool = False) -> str:
    doc = {
        "frame_id": frame_id,
        "dropped": dropped,
        "detections": [] if dropped else [detection_to_dict(d) for d in detections],
    }
    return dumps(doc)


def parse_log_line(line: str) -> tuple[int, list[Detection], bool]:
    doc = json.loads(line)
    frame_id = doc["frame_id"]
    dets = [detection_from_dict(d, frame_id) for d in doc.get("detections", [])]
    return frame_id, dets, bool(doc.get("dropped", False))
