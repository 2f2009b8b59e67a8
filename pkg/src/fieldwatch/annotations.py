"""Per-image text annotation format, dataset model and train/test splitting.

Label files hold one object per line, ``<class_id> <cx> <cy> <w> <h>``, with
all four coordinates normalized by image width/height so values lie in
[0, 1]. A label file shares its stem with the image it annotates
(``scene042.jpg`` / ``scene042.txt``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .rng import SPLIT, keyed_rng

# Tolerance absorbing float noise when augmented boxes are clamped back to
# the image frame.
EDGE_TOL = 1e-9

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".bmp")


class AnnotationError(ValueError):
    """Base class for annotation and dataset errors."""


class MalformedLine(AnnotationError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class ClassOutOfRange(AnnotationError):
    def __init__(self, line_no: int, class_id: int, class_count: int):
        super().__init__(
            f"line {line_no}: class id {class_id} outside 0..{class_count - 1}"
        )
        self.line_no = line_no
        self.class_id = class_id


class CoordinateOutOfRange(AnnotationError):
    pass


class DatasetTooSmall(AnnotationError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    """Normalized center-format box: (cx, cy) center, (w, h) size, all in [0, 1].

    Stored boxes never extend past the image frame by more than EDGE_TOL;
    use :meth:`clamped` to construct from coordinates that may overhang
    (augmentation output, jittered detections).
    """

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.class_id < 0:
            raise CoordinateOutOfRange(f"negative class id {self.class_id}")
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise CoordinateOutOfRange(f"{name}={v} is not finite")
            if not 0.0 <= v <= 1.0:
                raise CoordinateOutOfRange(f"{name}={v} outside [0, 1]")
        if self.w <= 0.0 or self.h <= 0.0:
            raise CoordinateOutOfRange(f"degenerate box w={self.w} h={self.h}")
        if (
            self.cx - self.w / 2 < -EDGE_TOL
            or self.cx + self.w / 2 > 1 + EDGE_TOL
            or self.cy - self.h / 2 < -EDGE_TOL
            or self.cy + self.h / 2 > 1 + EDGE_TOL
        ):
            raise CoordinateOutOfRange(
                f"box extends past image frame: cx={self.cx} cy={self.cy} "
                f"w={self.w} h={self.h}"
            )

    @classmethod
    def clamped(cls, class_id: int, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        """Build a box, clipping any overhang back to the image frame.

        Coordinates already inside the frame pass through untouched (no
        float churn). Raises CoordinateOutOfRange if nothing of the box
        remains inside.
        """
        x1, x2 = cx - w / 2, cx + w / 2
        y1, y2 = cy - h / 2, cy + h / 2
        if x1 >= -EDGE_TOL and x2 <= 1 + EDGE_TOL and y1 >= -EDGE_TOL and y2 <= 1 + EDGE_TOL:
            return cls(class_id, min(max(cx, 0.0), 1.0), min(max(cy, 0.0), 1.0), w, h)
        x1, x2 = min(max(x1, 0.0), 1.0), min(max(x2, 0.0), 1.0)
        y1, y2 = min(max(y1, 0.0), 1.0), min(max(y2, 0.0), 1.0)
        if x2 - x1 <= 0.0 or y2 - y1 <= 0.0:
            raise CoordinateOutOfRange("box lies entirely outside the image")
        return cls(class_id, (x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2) corner coordinates, still normalized."""
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    def area(self) -> float:
        return self.w * self.h

    def to_pixels(self, image_width: int, image_height: int) -> tuple[float, float, float, float]:
        """Denormalize to pixel units (cx, cy, w, h)."""
        return (
            self.cx * image_width,
            self.cy * image_height,
            self.w * image_width,
            self.h * image_height,
        )


def normalize_box(
    pixel_cx: float,
    pixel_cy: float,
    pixel_w: float,
    pixel_h: float,
    image_width: int,
    image_height: int,
) -> tuple[float, float, float, float]:
    """Divide pixel coordinates by image dimensions.

    Returns (cx, cy, w, h) in normalized units; raises CoordinateOutOfRange
    when the result falls outside the unit square.
    """
    if image_width <= 0 or image_height <= 0:
        raise ValueError(f"image dimensions must be positive, got {image_width}x{image_height}")
    if pixel_w <= 0 or pixel_h <= 0:
        raise CoordinateOutOfRange(f"degenerate pixel box {pixel_w}x{pixel_h}")
    coords = (
        pixel_cx / image_width,
        pixel_cy / image_height,
        pixel_w / image_width,
        pixel_h / image_height,
    )
    for v in coords:
        if not 0.0 <= v <= 1.0:
            raise CoordinateOutOfRange(f"normalized value {v} outside [0, 1]")
    return coords


def denormalize_box(
    cx: float, cy: float, w: float, h: float, image_width: int, image_height: int
) -> tuple[float, float, float, float]:
    """Inverse of :func:`normalize_box`."""
    return (cx * image_width, cy * image_height, w * image_width, h * image_height)


def parse_label_file(text: str, class_count: int) -> list[BoundingBox]:
    """Parse one label file into boxes, preserving line order.

    Blank lines are skipped. Any run of spaces/tabs separates fields; the
    emitted canonical form uses single spaces.
    """
    boxes: list[BoundingBox] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 5:
            raise MalformedLine(line_no, f"expected 5 fields, got {len(fields)}")
        try:
            class_id = int(fields[0])
        except ValueError:
            raise MalformedLine(line_no, f"class id {fields[0]!r} is not an integer") from None
        try:
            cx, cy, w, h = (float(f) for f in fields[1:])
        except ValueError:
            raise MalformedLine(line_no, "non-numeric coordinate") from None
        if not 0 <= class_id < class_count:
            raise ClassOutOfRange(line_no, class_id, class_count)
        for v in (cx, cy, w, h):
            if not (math.isfinite(v) and 0.0 <= v <= 1.0):
                raise CoordinateOutOfRange(f"line {line_no}: value {v} outside [0, 1]")
        if w <= 0.0 or h <= 0.0:
            raise CoordinateOutOfRange(f"line {line_no}: degenerate box w={w} h={h}")
        boxes.append(BoundingBox.clamped(class_id, cx, cy, w, h))
    return boxes


def emit_label_file(boxes: list[BoundingBox]) -> str:
    """Render boxes into the canonical label format (6 decimal places)."""
    return "".join(
        f"{b.class_id} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}\n" for b in boxes
    )


@dataclass(frozen=True)
class ImageAnnotation:
    """One image's ground truth. An empty box list is a negative sample."""

    image_id: str
    image_width: int
    image_height: int
    boxes: tuple[BoundingBox, ...] = ()

    def __post_init__(self):
        if not self.image_id:
            raise AnnotationError("empty image id")
        if "/" in self.image_id or "\\" in self.image_id:
            raise AnnotationError(f"image id {self.image_id!r} contains a path separator")
        if self.image_width <= 0 or self.image_height <= 0:
            raise AnnotationError(
                f"bad image dimensions {self.image_width}x{self.image_height}"
            )
        object.__setattr__(self, "boxes", tuple(self.boxes))

    def dominant_class(self) -> int | None:
        """Most frequent class among this image's boxes (ties: lowest id)."""
        if not self.boxes:
            return None
        counts: dict[int, int] = {}
        for b in self.boxes:
            counts[b.class_id] = counts.get(b.class_id, 0) + 1
        best = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))
        return best[0]


@dataclass
class Dataset:
    """A labeled image collection plus an optional train/test assignment."""

    class_names: list[str]
    annotations: list[ImageAnnotation]
    split_assignment: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        seen: set[str] = set()
        for ann in self.annotations:
            if ann.image_id in seen:
                raise AnnotationError(f"duplicate image id {ann.image_id!r}")
            seen.add(ann.image_id)
            for b in ann.boxes:
                if b.class_id >= len(self.class_names):
                    raise AnnotationError(
                        f"image {ann.image_id!r}: class id {b.class_id} has no name "
                        f"(dataset declares {len(self.class_names)} classes)"
                    )
        for image_id, side in self.split_assignment.items():
            if side not in ("train", "test"):
                raise AnnotationError(f"bad split value {side!r} for {image_id!r}")

    def by_id(self) -> dict[str, ImageAnnotation]:
        return {a.image_id: a for a in self.annotations}

    def class_box_counts(self) -> dict[int, int]:
        counts = {c: 0 for c in range(len(self.class_names))}
        for ann in self.annotations:
            for b in ann.boxes:
                counts[b.class_id] += 1
        return counts

    def subset(self, side: str) -> list[ImageAnnotation]:
        return [a for a in self.annotations if self.split_assignment.get(a.image_id) == side]


@dataclass(frozen=True)
class ValidationFinding:
    kind: str  # missing_label | missing_image | duplicate_image
    subject: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.subject}"


@dataclass
class ValidationReport:
    findings: list[ValidationFinding]
    class_box_counts: dict[int, int]
    imbalance_ratio: float | None

    @property
    def ok(self) -> bool:
        return not self.findings


def validate_dataset(dataset: Dataset, label_root: Path | str) -> ValidationReport:
    """Check image/label pairing on disk and summarize class balance.

    All problems are report entries, never exceptions: images lacking a
    label file, label files lacking an image, and image files that share a
    stem (which would collide on the label file).
    """
    root = Path(label_root)
    image_stems: dict[str, int] = {}
    label_stems: set[str] = set()
    for p in sorted(root.iterdir()) if root.is_dir() else []:
        suffix = p.suffix.lower()
        if suffix in IMAGE_EXTENSIONS:
            image_stems[p.stem] = image_stems.get(p.stem, 0) + 1
        elif suffix == ".txt" and p.stem != "classes":
            label_stems.add(p.stem)

    findings: list[ValidationFinding] = []
    for stem, n in sorted(image_stems.items()):
        if n > 1:
            findings.append(ValidationFinding("duplicate_image", stem))
        if stem not in label_stems:
            findings.append(ValidationFinding("missing_label", stem))
    for stem in sorted(label_stems):
        if stem not in image_stems:
            findings.append(ValidationFinding("missing_image", stem))

    counts = dataset.class_box_counts()
    positive = [c for c in counts.values() if c > 0]
    if not positive:
        ratio: float | None = None
    elif len(positive) < len(counts) or min(positive) == 0:
        ratio = math.inf
    else:
        ratio = max(positive) / min(positive)
    return ValidationReport(findings, counts, ratio)


def split_dataset(dataset: Dataset, test_fraction: float, seed: int) -> Dataset:
    """Assign every image to train or test, stratified by dominant class.

    Deterministic for a given seed. |test| = round(test_fraction * N), and
    a repair pass ensures each class present in at least two images appears
    on both sides whenever that is achievable by swapping.
    """
    if len(dataset.annotations) < 2:
        raise DatasetTooSmall(f"need at least 2 annotated images, got {len(dataset.annotations)}")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")

    n = len(dataset.annotations)
    target_test = int(test_fraction * n + 0.5)
    target_test = min(max(target_test, 1), n - 1)

    # Group image ids by dominant class; unlabeled images form their own group.
    groups: dict[int, list[str]] = {}
    for ann in sorted(dataset.annotations, key=lambda a: a.image_id):
        key = ann.dominant_class()
        groups.setdefault(-1 if key is None else key, []).append(ann.image_id)

    # Per-group quota by largest remainder, so quotas sum to target_test.
    keys = sorted(groups)
    quotas: dict[int, int] = {}
    remainders: list[tuple[float, int]] = []
    for k in keys:
        exact = test_fraction * len(groups[k])
        quotas[k] = int(exact)
        remainders.append((exact - quotas[k], k))
    short = target_test - sum(quotas.values())
    for _, k in sorted(remainders, key=lambda rk: (-rk[0], rk[1])):
        if short <= 0:
            break
        if quotas[k] < len(groups[k]):
            quotas[k] += 1
            short -= 1
    # Remainder rounding can still fall short when groups are tiny; top up
    # deterministically.
    for k in keys:
        while short > 0 and quotas[k] < len(groups[k]):
            quotas[k] += 1
            short -= 1
    for k in keys:
        if len(groups[k]) >= 2:
            quotas[k] = min(max(quotas[k], 1), len(groups[k]) - 1)

    assignment: dict[str, str] = {}
    for k in keys:
        ids = list(groups[k])
        order = keyed_rng(seed, SPLIT, k + 1).permutation(len(ids))
        test_ids = {ids[i] for i in order[: quotas[k]]}
        for image_id in ids:
            assignment[image_id] = "test" if image_id in test_ids else "train"

    # Re-balance to the exact target size (quota clamping may have drifted).
    def flip(from_side: str, to_side: str, count: int):
        candidates = sorted(i for i, s in assignment.items() if s == from_side)
        order = keyed_rng(seed, SPLIT, 0).permutation(len(candidates))
        for i in order[:count]:
            assignment[candidates[i]] = to_side

    test_size = sum(1 for s in assignment.values() if s == "test")
    if test_size < target_test:
        flip("train", "test", target_test - test_size)
    elif test_size > target_test:
        flip("test", "train", test_size - target_test)

    _repair_class_presence(dataset, assignment)
    return Dataset(dataset.class_names, dataset.annotations, assignment)


def _repair_class_presence(dataset: Dataset, assignment: dict[str, str]) -> None:
    """Swap images between splits until every class with >= 2 carrier images
    appears on both sides (best effort, deterministic)."""
    by_id = dataset.by_id()

    def carriers(class_id: int) -> list[str]:
        return sorted(
            a.image_id
            for a in dataset.annotations
            if any(b.class_id == class_id for b in a.boxes)
        )

    def present(class_id: int, side: str) -> bool:
        return any(assignment[i] == side for i in carriers(class_id))

    for _ in range(len(dataset.class_names) + 1):
        moved = False
        for class_id in range(len(dataset.class_names)):
            ids = carriers(class_id)
            if len(ids) < 2:
                continue
            for side, other in (("test", "train"), ("train", "test")):
                if present(class_id, side):
                    continue
                donor = next(i for i in ids if assignment[i] == other)
                # Swap with an image on `side` whose classes stay represented.
                for candidate in sorted(i for i, s in assignment.items() if s == side):
                    assignment[candidate], assignment[donor] = other, side
                    bad = any(
                        not (present(c, "train") and present(c, "test"))
                        for c in {b.class_id for b in by_id[candidate].boxes}
                        if len(carriers(c)) >= 2
                    )
                    if bad:
                        assignment[candidate], assignment[donor] = side, other
                    else:
                        moved = True
                        break
        if not moved:
            break


def load_class_names(path: Path | str) -> list[str]:
    """One class name per line; index = line number from 0."""
    names = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines()]
    names = [n for n in names if n]
    if not names:
        raise AnnotationError(f"no class names in {path}")
    return names
