"""Detection quality metrics: IoU, greedy matching, PR curves, AP/mAP.

Matching follows the darknet convention: detections are consumed in
descending confidence order and each one greedily claims the best still
free same-class ground-truth box meeting the IoU threshold. AP is the area
under the precision/recall curve using all-point interpolation (the best
precision at any recall at or beyond each unique recall value).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .annotations import BoundingBox, Dataset


class UnknownImage(KeyError):
    pass


@dataclass(frozen=True)
class Detection:
    """A detector output: box plus confidence score."""

    box: BoundingBox
    confidence: float
    frame_id: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union in corner geometry; 0 when disjoint."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


@dataclass
class MatchResult:
    """Outcome of matching one image's detections against its ground truth.

    pairs holds (detection index, truth index, iou); indices appear at most
    once. Unmatched detections are false positives, unmatched truths false
    negatives.
    """

    pairs: list[tuple[int, int, float]]
    unmatched_detections: list[int]
    unmatched_truths: list[int]


def match_detections(
    detections: Sequence[Detection],
    truths: Sequence[BoundingBox],
    iou_threshold: float,
) -> MatchResult:
    """Greedy one-to-one matching in descending confidence order.

    Ties in confidence break by ascending input index; ties in IoU by
    ascending truth index. Class mismatches never pair.
    """
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    free = set(range(len(truths)))
    pairs: list[tuple[int, int, float]] = []
    unmatched: list[int] = []
    for d_idx in order:
        det = detections[d_idx]
        best_t = -1
        best_iou = 0.0
        for t_idx in sorted(free):
            if truths[t_idx].class_id != det.box.class_id:
                continue
            v = iou(det.box, truths[t_idx])
            if v >= iou_threshold and v > best_iou:
                best_iou = v
                best_t = t_idx
        if best_t >= 0:
            free.discard(best_t)
            pairs.append((d_idx, best_t, best_iou))
        else:
            unmatched.append(d_idx)
    pairs.sort(key=lambda p: p[0])
    unmatched.sort()
    return MatchResult(pairs, unmatched, sorted(free))


def precision_recall_curve(
    detections_by_image: Mapping[str, Sequence[Detection]],
    truths_by_image: Mapping[str, Sequence[BoundingBox]],
    iou_threshold: float,
    class_id: int,
) -> list[tuple[float, float]]:
    """One (recall, precision) point per rank of the pooled class detections.

    Detections pool across images sorted by descending confidence (ties by
    image id, then input index); matching consumes each image's ground
    truth greedily in that rank order. Returns [] when the class has no
    ground truth anywhere.
    """
    free: dict[str, set[int]] = {}
    total = 0
    for image_id, truths in truths_by_image.items():
        idxs = {i for i, t in enumerate(truths) if t.class_id == class_id}
        free[image_id] = idxs
        total += len(idxs)
    if total == 0:
        return []

    pooled = [
        (image_id, idx, det)
        for image_id, dets in detections_by_image.items()
        for idx, det in enumerate(dets)
        if det.box.class_id == class_id
    ]
    pooled.sort(key=lambda t: (-t[2].confidence, t[0], t[1]))

    curve: list[tuple[float, float]] = []
    tp = 0
    fp = 0
    for image_id, _, det in pooled:
        truths = truths_by_image.get(image_id, ())
        candidates = free.get(image_id, set())
        best_t = -1
        best_iou = 0.0
        for t_idx in sorted(candidates):
            v = iou(det.box, truths[t_idx])
            if v >= iou_threshold and v > best_iou:
                best_iou = v
                best_t = t_idx
        if best_t >= 0:
            candidates.discard(best_t)
            tp += 1
        else:
            fp += 1
        curve.append((tp / total, tp / (tp + fp)))
    return curve


def average_precision(curve: Sequence[tuple[float, float]]) -> float:
    """Area under the PR curve: sum over unique recalls of the recall step
    times the best precision at or beyond that recall."""
    if not curve:
        return 0.0
    recalls = [r for r, _ in curve]
    if any(recalls[i] > recalls[i + 1] for i in range(len(recalls) - 1)):
        raise ValueError("recalls must be non-decreasing")
    # suffix_max[k] = best precision among points k..end (recall >= recalls[k])
    suffix_max = [0.0] * len(curve)
    best = 0.0
    for k in range(len(curve) - 1, -1, -1):
        best = max(best, curve[k][1])
        suffix_max[k] = best
    terms = []
    prev_r = 0.0
    for k, (r, _) in enumerate(curve):
        if k > 0 and r == curve[k - 1][0]:
            continue  # only the first point of each unique recall
        terms.append((r - prev_r) * suffix_max[k])
        prev_r = r
    return math.fsum(terms)


@dataclass
class ConfusionSummary:
    tp: int
    fp: int
    fn: int
    average_iou: float


def confusion_summary(match_results: Iterable[MatchResult]) -> ConfusionSummary:
    """Sum matches over a corpus; average IoU is the mean over TP pairs."""
    tp = 0
    fp = 0
    fn = 0
    ious: list[float] = []
    for m in match_results:
        tp += len(m.pairs)
        fp += len(m.unmatched_detections)
        fn += len(m.unmatched_truths)
        ious.extend(v for _, _, v in m.pairs)
    avg = math.fsum(ious) / tp if tp else 0.0
    return ConfusionSummary(tp, fp, fn, avg)


@dataclass
class EvalReport:
    """Evaluation results over a dataset.

    AP/mAP use every detection regardless of confidence; the TP/FP/FN and
    average-IoU block is computed at the first IoU threshold using only
    detections at or above confidence_threshold. Classes without any ground
    truth are excluded from the mAP mean and listed separately.
    """

    per_class_ap: dict[int, dict[float, float]]
    map_at: dict[float, float]
    tp: int
    fp: int
    fn: int
    average_iou: float
    confidence_threshold: float
    iou_thresholds: tuple[float, ...]
    class_names: list[str] | None = None
    classes_without_truth: list[int] = field(default_factory=list)
    fps: float | None = None
    network: str = "oracle"

    def class_label(self, class_id: int) -> str:
        if self.class_names and class_id < len(self.class_names):
            return self.class_names[class_id]
        return f"class{class_id}"

    def to_json(self) -> str:
        doc = {
            "network": self.network,
            "per_class_ap": {
                str(c): {f"{t:g}": ap for t, ap in sorted(per.items())}
                for c, per in sorted(self.per_class_ap.items())
            },
            "map": {f"{t:g}": m for t, m in sorted(self.map_at.items())},
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "avg_iou": self.average_iou,
            "confidence_threshold": self.confidence_threshold,
            "iou_thresholds": list(self.iou_thresholds),
            "class_names": self.class_names,
            "classes_without_truth": self.classes_without_truth,
            "fps": self.fps,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        doc = json.loads(text)
        return cls(
            per_class_ap={
                int(c): {float(t): ap for t, ap in per.items()}
                for c, per in doc["per_class_ap"].items()
            },
            map_at={float(t): m for t, m in doc["map"].items()},
            tp=doc["tp"],
            fp=doc["fp"],
            fn=doc["fn"],
            average_iou=doc["avg_iou"],
            confidence_threshold=doc["confidence_threshold"],
            iou_thresholds=tuple(doc["iou_thresholds"]),
            class_names=doc.get("class_names"),
            classes_without_truth=doc.get("classes_without_truth", []),
            fps=doc.get("fps"),
            network=doc.get("network", "oracle"),
        )

    def render_text(self) -> str:
        """Human-readable report: confusion block, mAP lines (raw and as a
        percentage), per-class APs and a model summary table."""
        first = self.iou_thresholds[0]
        lines = [
            f"Network: {self.network}",
            (
                f"Confusion @ conf>={self.confidence_threshold:g}, IoU>={first:g}: "
                f"TP={self.tp} FP={self.fp} FN={self.fn} "
                f"avgIoU={self.average_iou * 100:.2f}%"
            ),
        ]
        for t in self.iou_thresholds:
            m = self.map_at[t]
            lines.append(f"mAP@{t:g} = {m:.6f} ({m * 100:.1f}%)")
        for c in sorted(self.per_class_ap):
            per = self.per_class_ap[c]
            parts = ", ".join(f"AP@{t:g}={per[t]:.4f}" for t in self.iou_thresholds if t in per)
            lines.append(f"  {self.class_label(c)}: {parts}")
        if self.classes_without_truth:
            names = ", ".join(self.class_label(c) for c in self.classes_without_truth)
            lines.append(f"  (no ground truth, excluded from mAP: {names})")
        lines.append("")
        lines.append(render_model_table([(self.network, self.map_at[first], self.fps)]))
        return "\n".join(lines)


def render_model_table(rows: Sequence[tuple[str, float, float | None]]) -> str:
    """Model comparison table with Network / mAP / FPS columns."""
    out = [f"{'Network':<24}{'mAP':>10}{'FPS':>8}"]
    for network, map_value, fps in rows:
        fps_text = f"{fps:.0f}" if fps is not None else "-"
        out.append(f"{network:<24}{map_value * 100:>9.1f}%{fps_text:>8}")
    return "\n".join(out)


def evaluate(
    detections_by_image: Mapping[str, Sequence[Detection]],
    dataset: Dataset,
    iou_thresholds: Sequence[float],
    confidence_threshold: float,
    fps: float | None = None,
    network: str = "oracle",
) -> EvalReport:
    """Evaluate a detection corpus against dataset ground truth.

    Raises UnknownImage when detections reference an image id the dataset
    does not contain.
    """
    if not iou_thresholds:
        raise ValueError("need at least one IoU threshold")
    by_id = dataset.by_id()
    for image_id in detections_by_image:
        if image_id not in by_id:
            raise UnknownImage(image_id)

    truths_by_image = {a.image_id: a.boxes for a in dataset.annotations}
    truth_counts = dataset.class_box_counts()
    classes_with_truth = [c for c in sorted(truth_counts) if truth_counts[c] > 0]
    classes_without = [c for c in sorted(truth_counts) if truth_counts[c] == 0]

    per_class_ap: dict[int, dict[float, float]] = {c: {} for c in classes_with_truth}
    map_at: dict[float, float] = {}
    for thr in iou_thresholds:
        aps = []
        for c in classes_with_truth:
            curve = precision_recall_curve(detections_by_image, truths_by_image, thr, c)
            ap = average_precision(curve)
            per_class_ap[c][thr] = ap
            aps.append(ap)
        map_at[thr] = math.fsum(aps) / len(aps) if aps else 0.0

    gate = confidence_threshold
    results = []
    for image_id in sorted(truths_by_image):
        dets = [d for d in detections_by_image.get(image_id, ()) if d.confidence >= gate]
        results.append(match_detections(dets, truths_by_image[image_id], iou_thresholds[0]))
    confusion = confusion_summary(results)

    return EvalReport(
        per_class_ap=per_class_ap,
        map_at=map_at,
        tp=confusion.tp,
        fp=confusion.fp,
        fn=confusion.fn,
        average_iou=confusion.average_iou,
        confidence_threshold=confidence_threshold,
        iou_thresholds=tuple(iou_thresholds),
        class_names=list(dataset.class_names),
        classes_without_truth=classes_without,
        fps=fps,
        network=network,
    )
