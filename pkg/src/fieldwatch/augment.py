"""Dataset preprocessing and label-preserving augmentation.

Video-derived datasets suffer from two dominant defects: long runs of
near-identical frames and motion-blurred frames. dedupe_frames and
reject_blurry handle those. apply_augmentation diversifies what remains
with horizontal flips, brightness shifts, gaussian noise and crops, keeping
boxes consistent with the pixels; balance_dataset appends augmented copies
of minority-class images until per-class box counts even out.

Randomness is keyed by (spec.seed, operation, draw), so augmenting the same
image with the same draw ordinal is bit-identical no matter when or where
it runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .annotations import BoundingBox, CoordinateOutOfRange, Dataset, ImageAnnotation
from .frames import check_pixels

# A cropped box survives only if this much of its area stays visible.
MIN_VISIBLE_FRACTION = 0.25

_GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


class EmptyInput(ValueError):
    pass


class ImageTooSmall(ValueError):
    pass


def dedupe_frames(frames: list[np.ndarray], diff_threshold: float) -> list[int]:
    """Indices of frames to keep: frame 0, then every frame whose mean
    absolute per-sample difference to the last kept frame exceeds the
    threshold."""
    if not frames:
        raise EmptyInput("no frames")
    kept = [0]
    reference = frames[0].astype(np.int16)
    for i in range(1, len(frames)):
        candidate = frames[i].astype(np.int16)
        if float(np.abs(candidate - reference).mean()) > diff_threshold:
            kept.append(i)
            reference = candidate
    return kept


def sharpness_score(image: np.ndarray) -> float:
    """Variance of the discrete Laplacian over the grayscale image."""
    check_pixels(image)
    if image.shape[0] < 3 or image.shape[1] < 3:
        raise ImageTooSmall(f"need at least 3x3 pixels, got {image.shape[1]}x{image.shape[0]}")
    g = image.astype(np.float64) @ _GRAY_WEIGHTS
    lap = g[:-2, 1:-1] + g[2:, 1:-1] + g[1:-1, :-2] + g[1:-1, 2:] - 4.0 * g[1:-1, 1:-1]
    return float(lap.var())


def reject_blurry(image: np.ndarray, sharpness_threshold: float) -> tuple[bool, float]:
    """(keep, score): reject iff Laplacian variance falls below threshold."""
    score = sharpness_score(image)
    return score >= sharpness_threshold, score


@dataclass(frozen=True)
class AugmentationSpec:
    """Transform menu and strengths. All draws derive from (seed, draw)."""

    horizontal_flip: float = 0.5
    brightness_delta: float = 0.0
    gaussian_noise_sigma: float = 0.0
    crop_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.horizontal_flip <= 1.0:
            raise ValueError(f"flip probability {self.horizontal_flip} outside [0, 1]")
        if not 0.0 <= self.brightness_delta <= 255.0:
            raise ValueError(f"brightness_delta {self.brightness_delta} outside [0, 255]")
        if self.gaussian_noise_sigma < 0:
            raise ValueError("gaussian_noise_sigma must be >= 0")
        if not 0.0 <= self.crop_fraction <= 0.3:
            raise ValueError(f"crop_fraction {self.crop_fraction} outside [0, 0.3]")


@dataclass(frozen=True)
class AugmentationParams:
    """Concrete draws for one (spec, draw) pair, shared by the pixel and
    box paths so annotation-only augmentation matches pixel output."""

    flip: bool
    brightness: float
    noise_sigma: float
    crop: tuple[float, float, float, float]  # left, top, right, bottom fractions

    @property
    def geometric(self) -> bool:
        return self.flip or any(f > 0 for f in self.crop)


def draw_params(spec: AugmentationSpec, draw: int) -> AugmentationParams:
    flip = False
    if spec.horizontal_flip > 0:
        flip = bool(rng.keyed_rng(spec.seed, rng.AUG_FLIP, draw).random() < spec.horizontal_flip)
    brightness = 0.0
    if spec.brightness_delta > 0:
        brightness = float(
            rng.keyed_rng(spec.seed, rng.AUG_BRIGHTNESS, draw).uniform(
                -spec.brightness_delta, spec.brightness_delta
            )
        )
    crop = (0.0, 0.0, 0.0, 0.0)
    if spec.crop_fraction > 0:
        crop = tuple(rng.keyed_rng(spec.seed, rng.AUG_CROP, draw).uniform(0.0, spec.crop_fraction, 4))
    return AugmentationParams(flip, brightness, spec.gaussian_noise_sigma, crop)


def transform_boxes(
    boxes: list[BoundingBox] | tuple[BoundingBox, ...], params: AugmentationParams
) -> list[BoundingBox]:
    """Apply the geometric part of an augmentation to boxes.

    Flip mirrors cx; crop re-normalizes to the surviving region and drops
    boxes with less than MIN_VISIBLE_FRACTION of their area still visible.
    Photometric changes never touch boxes.
    """
    out: list[BoundingBox] = []
    left, top, right, bottom = params.crop
    new_w = 1.0 - left - right
    new_h = 1.0 - top - bottom
    for box in boxes:
        cx = 1.0 - box.cx if params.flip else box.cx
        if new_w >= 1.0 and new_h >= 1.0:
            out.append(BoundingBox(box.class_id, cx, box.cy, box.w, box.h))
            continue
        x1, y1, x2, y2 = cx - box.w / 2, box.cy - box.h / 2, cx + box.w / 2, box.cy + box.h / 2
        vx1, vy1 = max(x1, left), max(y1, top)
        vx2, vy2 = min(x2, 1.0 - right), min(y2, 1.0 - bottom)
        visible = max(vx2 - vx1, 0.0) * max(vy2 - vy1, 0.0)
        if visible < MIN_VISIBLE_FRACTION * box.area():
            continue
        try:
            out.append(
                BoundingBox.clamped(
                    box.class_id,
                    ((vx1 + vx2) / 2 - left) / new_w,
                    ((vy1 + vy2) / 2 - top) / new_h,
                    (vx2 - vx1) / new_w,
                    (vy2 - vy1) / new_h,
                )
            )
        except CoordinateOutOfRange:
            continue
    return out


def transform_pixels(image: np.ndarray, params: AugmentationParams, spec: AugmentationSpec, draw: int) -> np.ndarray:
    check_pixels(image)
    work = image[:, ::-1, :] if params.flip else image
    work = work.astype(np.float64)
    if params.brightness != 0.0:
        work = work + params.brightness
    if params.noise_sigma > 0.0:
        noise = rng.keyed_rng(spec.seed, rng.AUG_NOISE, draw).normal(0.0, params.noise_sigma, work.shape)
        work = work + noise
    work = np.clip(np.rint(work), 0, 255).astype(np.uint8)
    left, top, right, bottom = params.crop
    if any(f > 0 for f in params.crop):
        h, w = work.shape[:2]
        x0 = min(int(round(left * w)), w - 1)
        x1 = max(w - int(round(right * w)), x0 + 1)
        y0 = min(int(round(top * h)), h - 1)
        y1 = max(h - int(round(bottom * h)), y0 + 1)
        work = work[y0:y1, x0:x1]
    return np.ascontiguousarray(work)


def apply_augmentation(
    image: np.ndarray,
    boxes: list[BoundingBox] | tuple[BoundingBox, ...],
    spec: AugmentationSpec,
    draw: int,
) -> tuple[np.ndarray, list[BoundingBox]]:
    """Augment one image and its boxes; pure function of (image, boxes,
    spec, draw)."""
    params = draw_params(spec, draw)
    return transform_pixels(image, params, spec, draw), transform_boxes(boxes, params)


@dataclass
class BalanceAddition:
    source_id: str
    new_id: str
    draw: int


@dataclass
class BalanceResult:
    dataset: Dataset
    additions: list[BalanceAddition]
    cap_reached: bool

    def manifest(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for a in self.additions:
            out.setdefault(a.source_id, []).append(a.new_id)
        return out


def balance_dataset(
    dataset: Dataset, spec: AugmentationSpec, target_ratio: float
) -> BalanceResult:
    """Append augmented copies of minority-class images until the
    max/min per-class box-count ratio is at most target_ratio.

    Copies get image ids `<source>_augN`. Each source image is copied at
    most 10 times; hitting that cap is reported, not raised. The geometric
    transform for copy (source, N) uses a stable draw ordinal, so a later
    pixel materialization pass reproduces exactly these boxes.
    """
    if target_ratio < 1.0:
        raise ValueError(f"target_ratio must be >= 1, got {target_ratio}")
    counts = dataset.class_box_counts()
    if any(c == 0 for c in counts.values()):
        raise ValueError("every class needs at least one box to balance")

    annotations = list(dataset.annotations)
    additions: list[BalanceAddition] = []
    copies_per_source: dict[str, int] = {}
    draw = 0
    cap_reached = False

    def ratio() -> float:
        return max(counts.values()) / min(counts.values())

    while ratio() > target_ratio:
        minority = min(counts, key=lambda c: (counts[c], c))
        sources = sorted(
            (a for a in dataset.annotations if any(b.class_id == minority for b in a.boxes)),
            key=lambda a: a.image_id,
        )
        candidates = [a for a in sources if copies_per_source.get(a.image_id, 0) < 10]
        if not candidates:
            cap_reached = True
            break
        # Round-robin: pick the least-copied source, ties by id.
        src = min(candidates, key=lambda a: (copies_per_source.get(a.image_id, 0), a.image_id))
        n = copies_per_source.get(src.image_id, 0)
        params = draw_params(spec, draw)
        new_boxes = transform_boxes(src.boxes, params)
        new_id = f"{src.image_id}_aug{n}"
        annotations.append(
            ImageAnnotation(new_id, src.image_width, src.image_height, tuple(new_boxes))
        )
        additions.append(BalanceAddition(src.image_id, new_id, draw))
        copies_per_source[src.image_id] = n + 1
        for b in new_boxes:
            counts[b.class_id] += 1
        draw += 1

    balanced = Dataset(dataset.class_names, annotations, dict(dataset.split_assignment))
    return BalanceResult(balanced, additions, cap_reached)
