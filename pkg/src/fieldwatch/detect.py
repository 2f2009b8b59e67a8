"""Detector backends and detection post-processing.

The pipeline treats detectors as pluggable backends behind a single
interface. The always-available oracle backend perturbs known ground truth
with configurable miss/jitter/false-positive rates, standing in for trained
networks so every downstream stage can be exercised and verified without
model weights.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import rng
from .annotations import BoundingBox, CoordinateOutOfRange
from .frames import FrameRecord
from .metrics import Detection, iou

DEFAULT_CONFIDENCE_THRESHOLD = 0.25
DEFAULT_NMS_THRESHOLD = 0.45

# Spurious boxes are small-to-medium: distant, partly hidden objects.
FP_SIZE_RANGE = (0.02, 0.3)
MIN_BOX_SIZE = 1e-4


class BackendError(Exception):
    pass


class ModelNotFound(BackendError):
    pass


class ClassListMismatch(BackendError):
    pass


class UnsupportedBackend(BackendError):
    pass


class DetectorBackend:
    """Interface: detect() must be deterministic for fixed state and input."""

    name: str = "backend"
    input_size: tuple[int, int] = (416, 416)

    def detect(self, frame: FrameRecord) -> list[Detection]:
        raise NotImplementedError


def filter_by_confidence(detections: Sequence[Detection], threshold: float) -> list[Detection]:
    """Keep detections with confidence >= threshold, order preserved."""
    return [d for d in detections if d.confidence >= threshold]


def nms(detections: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Class-wise hard non-maximum suppression.

    Within each class, in descending confidence order (ties by input
    index), a detection survives iff its IoU with every already kept
    same-class detection is below the threshold. Output is sorted by
    descending confidence.
    """
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    kept_by_class: dict[int, list[int]] = {}
    kept: list[int] = []
    for i in order:
        det = detections[i]
        same_class = kept_by_class.setdefault(det.box.class_id, [])
        if all(iou(det.box, detections[j].box) < iou_threshold for j in same_class):
            same_class.append(i)
            kept.append(i)
    return [detections[i] for i in kept]


@dataclass(frozen=True)
class OracleConfig:
    """Perturbation model applied to ground truth by the oracle backend.

    p_miss simulates occlusion misses, jitter_sigma localization error,
    fp_rate background-clutter false alarms (Poisson per frame). Confidence
    scores draw uniformly from the given ranges.
    """

    p_miss: float = 0.0
    jitter_sigma: float = 0.0
    fp_rate: float = 0.0
    tp_confidence: tuple[float, float] = (0.5, 1.0)
    fp_confidence: tuple[float, float] = (0.05, 0.5)
    seed: int = 0
    class_count: int = 2

    def __post_init__(self):
        if not 0.0 <= self.p_miss <= 1.0:
            raise ValueError(f"p_miss {self.p_miss} outside [0, 1]")
        if self.jitter_sigma < 0 or self.fp_rate < 0:
            raise ValueError("jitter_sigma and fp_rate must be >= 0")
        for lo, hi in (self.tp_confidence, self.fp_confidence):
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"bad confidence range ({lo}, {hi})")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")


def oracle_detect(
    frame_truths: Sequence[BoundingBox], config: OracleConfig, frame_id: int
) -> list[Detection]:
    """Simulate a detector on one frame's ground truth.

    Every draw is keyed by (seed, purpose, frame_id, ordinal), so output is
    bit-identical across runs for a fixed (config, frame_id) regardless of
    processing order.
    """
    seed = config.seed
    out: list[Detection] = []
    for i, truth in enumerate(frame_truths):
        if config.p_miss > 0.0:
            if rng.keyed_rng(seed, rng.MISS, frame_id, i).random() < config.p_miss:
                continue
        box = truth
        if config.jitter_sigma > 0.0:
            d = rng.keyed_rng(seed, rng.JITTER, frame_id, i).normal(0.0, config.jitter_sigma, 4)
            w = min(max(truth.w + d[2], MIN_BOX_SIZE), 1.0)
            h = min(max(truth.h + d[3], MIN_BOX_SIZE), 1.0)
            try:
                box = BoundingBox.clamped(truth.class_id, truth.cx + d[0], truth.cy + d[1], w, h)
            except CoordinateOutOfRange:
                continue  # jittered entirely out of frame
        lo, hi = config.tp_confidence
        conf = float(rng.keyed_rng(seed, rng.TP_CONF, frame_id, i).uniform(lo, hi))
        out.append(Detection(box, conf, frame_id))

    if config.fp_rate > 0.0:
        n_fp = int(rng.keyed_rng(seed, rng.FP_COUNT, frame_id).poisson(config.fp_rate))
        for j in range(n_fp):
            g = rng.keyed_rng(seed, rng.FP_GEOMETRY, frame_id, j)
            class_id = int(g.integers(0, config.class_count))
            cx, cy = g.uniform(0.0, 1.0, 2)
            w, h = g.uniform(*FP_SIZE_RANGE, 2)
            box = BoundingBox.clamped(class_id, float(cx), float(cy), float(w), float(h))
            lo, hi = config.fp_confidence
            conf = float(rng.keyed_rng(seed, rng.FP_CONF, frame_id, j).uniform(lo, hi))
            out.append(Detection(box, conf, frame_id))
    return out


class OracleBackend(DetectorBackend):
    """Detector that perturbs the ground truth attached to each frame."""

    name = "oracle"

    def __init__(self, config: OracleConfig, input_size: tuple[int, int] = (416, 416)):
        self.config = config
        self.input_size = input_size

    def detect(self, frame: FrameRecord) -> list[Detection]:
        truths = frame.truths or ()
        return oracle_detect(truths, self.config, frame.frame_id)


class PlaybackBackend(DetectorBackend):
    """Replays previously logged detections keyed by frame id."""

    name = "playback"

    def __init__(self, detections_by_frame: dict[int, list[Detection]]):
        self._by_frame = detections_by_frame

    def detect(self, frame: FrameRecord) -> list[Detection]:
        return list(self._by_frame.get(frame.frame_id, ()))


class ThrottledBackend(DetectorBackend):
    """Caps an inner backend's rate, simulating inference latency.

    Pacing is deadline-based so long-run throughput equals max_fps exactly.
    """

    def __init__(self, inner: DetectorBackend, max_fps: float):
        if max_fps <= 0:
            raise ValueError("max_fps must be positive")
        self.inner = inner
        self.period = 1.0 / max_fps
        self.name = f"{inner.name}@{max_fps:g}fps"
        self.input_size = inner.input_size
        self._next_deadline: float | None = None

    def detect(self, frame: FrameRecord) -> list[Detection]:
        result = self.inner.detect(frame)
        now = time.monotonic()
        if self._next_deadline is None:
            self._next_deadline = now + self.period
        delay = self._next_deadline - now
        if delay > 0:
            time.sleep(delay)
        else:
            self._next_deadline = now  # fell behind; do not accumulate debt
        self._next_deadline += self.period
        return result


def backend_from_descriptor(
    doc: dict, expected_class_names: Sequence[str] | None = None
) -> DetectorBackend:
    """Build a backend from a parsed descriptor.

    Descriptor fields: backend ("oracle" | "external"), class_names,
    input_width, input_height; oracle backends embed an "oracle" object
    with OracleConfig fields, external ones name a model_path. External
    inference runtimes are not part of this build, so "external" fails
    here, at load time, with UnsupportedBackend — never at detect time.
    """
    kind = doc.get("backend")
    class_names = doc.get("class_names", [])
    if expected_class_names is not None and list(class_names) != list(expected_class_names):
        raise ClassListMismatch(
            f"descriptor declares classes {class_names}, dataset has {list(expected_class_names)}"
        )
    input_size = (int(doc.get("input_width", 416)), int(doc.get("input_height", 416)))

    if kind == "oracle":
        fields = dict(doc.get("oracle", {}))
        fields.setdefault("class_count", max(len(class_names), 1))
        if "tp_confidence" in fields:
            fields["tp_confidence"] = tuple(fields["tp_confidence"])
        if "fp_confidence" in fields:
            fields["fp_confidence"] = tuple(fields["fp_confidence"])
        return OracleBackend(OracleConfig(**fields), input_size)
    if kind == "playback":
        sidecar = doc.get("sidecar")
        if not sidecar or not Path(sidecar).is_file():
            raise ModelNotFound(f"sidecar detection log not found: {sidecar}")
        from .runtime.recording import load_sidecar_log

        return PlaybackBackend(load_sidecar_log(sidecar))
    if kind == "external":
        model_path = doc.get("model_path")
        if not model_path or not Path(model_path).is_file():
            raise ModelNotFound(f"model file not found: {model_path}")
        raise UnsupportedBackend(
            "external inference runtimes are not bundled with this build; "
            "use an oracle descriptor or install a runtime integration"
        )
    raise UnsupportedBackend(f"unknown backend kind {kind!r}")


def load_backend(
    descriptor_path: Path | str,
    expected_class_names: Sequence[str] | None = None,
) -> DetectorBackend:
    """Build a backend from a JSON descriptor file (see
    :func:`backend_from_descriptor` for the schema)."""
    path = Path(descriptor_path)
    if not path.is_file():
        raise ModelNotFound(f"backend descriptor not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise BackendError(f"descriptor {path} is not valid JSON: {e}") from e
    return backend_from_descriptor(doc, expected_class_names)
