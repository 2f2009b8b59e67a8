"""Filesystem access for datasets: images beside label files.

Annotation parsing stays in annotations; this module only touches disk and
decodes image headers for dimensions.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

from .annotations import (
    IMAGE_EXTENSIONS,
    Dataset,
    ImageAnnotation,
    emit_label_file,
    parse_label_file,
)
from .metrics import Detection
from .runtime import logfmt


def load_dataset(root: Path | str, class_names: Sequence[str]) -> Dataset:
    """Read every image in root and its sibling label file.

    Images without a label file load as negative samples; run validation
    first when that should be an error.
    """
    from PIL import Image

    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    annotations = []
    for path in sorted(root.iterdir()):
        if path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        with Image.open(path) as im:
            width, height = im.size
        label_path = path.with_suffix(".txt")
        boxes = ()
        if label_path.is_file():
            boxes = tuple(
                parse_label_file(label_path.read_text(encoding="utf-8"), len(class_names))
            )
        annotations.append(ImageAnnotation(path.stem, width, height, boxes))
    return Dataset(list(class_names), annotations)


def write_annotation(root: Path | str, annotation: ImageAnnotation, pixels=None) -> None:
    """Write one image (PNG) and its label file."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if pixels is not None:
        from PIL import Image

        Image.fromarray(pixels, mode="RGB").save(root / f"{annotation.image_id}.png")
    (root / f"{annotation.image_id}.txt").write_text(
        emit_label_file(list(annotation.boxes)), encoding="utf-8"
    )


def load_detections_file(path: Path | str) -> dict[str, list[Detection]]:
    """Detections JSON: {image_id: [{class, cx, cy, w, h, conf}, ...]}."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return {
        image_id: [logfmt.detection_from_dict(d) for d in dets]
        for image_id, dets in doc.items()
    }


def save_detections_file(path: Path | str, detections_by_image: Mapping[str, Sequence[Detection]]) -> None:
    doc = {
        image_id: [logfmt.detection_to_dict(d) for d in dets]
        for image_id, dets in detections_by_image.items()
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
