"""Frame payloads flowing through the live pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotations import BoundingBox


@dataclass
class FrameRecord:
    """One captured frame.

    pixels is an (H, W, 3) uint8 array, or None for metadata-only replay.
    truths carries scripted or recorded ground truth when the source knows
    it (synthetic scenes, recordings); the oracle backend detects from it.
    """

    frame_id: int
    timestamp_ns: int
    width: int
    height: int
    pixels: np.ndarray | None = None
    truths: tuple[BoundingBox, ...] | None = None


def check_pixels(pixels: np.ndarray) -> np.ndarray:
    """Validate an RGB uint8 image array."""
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) array, got shape {pixels.shape}")
    if pixels.dtype != np.uint8:
        raise ValueError(f"expected uint8 samples, got {pixels.dtype}")
    return pixels
