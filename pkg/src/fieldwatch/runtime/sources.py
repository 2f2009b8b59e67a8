"""Frame sources: synthetic scripted scenes, image directories, recordings,
video files and cameras.

Synthetic scenes script objects with linear trajectories, entry/exit frames
and per-frame dropouts (simulated occlusion), and render them as filled
rectangles, so pipeline behavior — detection, tracking, counting — is
verifiable against known identities without any real footage.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from ..annotations import BoundingBox, CoordinateOutOfRange
from ..frames import FrameRecord

CLASS_COLORS = [
    (60, 200, 60),   # class 0: green
    (220, 60, 60),   # class 1: red
    (60, 60, 220),
    (220, 180, 40),
]


class SourceUnavailable(Exception):
    pass


class FrameSource:
    """Iterable of FrameRecords plus pacing/resolution hints."""

    fps: float | None = None
    resolution: tuple[int, int] = (0, 0)

    def frames(self) -> Iterator[FrameRecord]:
        raise NotImplementedError


@dataclass(frozen=True)
class SceneObject:
    class_id: int
    start_cx: float
    start_cy: float
    velocity_x: float = 0.0
    velocity_y: float = 0.0
    w: float = 0.1
    h: float = 0.1
    enter_frame: int = 0
    exit_frame: int | None = None
    dropout_frames: frozenset[int] = field(default_factory=frozenset)

    def box_at(self, frame_id: int) -> BoundingBox | None:
        if frame_id < self.enter_frame:
            return None
        if self.exit_frame is not None and frame_id >= self.exit_frame:
            return None
        if frame_id in self.dropout_frames:
            return None
        t = frame_id - self.enter_frame
        cx = self.start_cx + self.velocity_x * t
        cy = self.start_cy + self.velocity_y * t
        try:
            return BoundingBox.clamped(self.class_id, cx, cy, self.w, self.h)
        except CoordinateOutOfRange:
            return None  # drifted out of frame


@dataclass
class SyntheticScene:
    width: int = 320
    height: int = 240
    frame_count: int = 100
    objects: list[SceneObject] = field(default_factory=list)
    background: tuple[int, int, int] = (96, 96, 96)

    def truths_at(self, frame_id: int) -> tuple[BoundingBox, ...]:
        boxes = []
        for obj in self.objects:
            box = obj.box_at(frame_id)
            if box is not None:
                boxes.append(box)
        return tuple(boxes)

    def render(self, frame_id: int) -> np.ndarray:
        img = np.empty((self.height, self.width, 3), dtype=np.uint8)
        img[:, :] = self.background
        for box in self.truths_at(frame_id):
            x1, y1, x2, y2 = box.corners()
            c0 = int(round(x1 * self.width))
            r0 = int(round(y1 * self.height))
            c1 = max(int(round(x2 * self.width)), c0 + 1)
            r1 = max(int(round(y2 * self.height)), r0 + 1)
            img[r0:r1, c0:c1] = CLASS_COLORS[box.class_id % len(CLASS_COLORS)]
        return img

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticScene":
        objects = [
            SceneObject(
                class_id=o["class_id"],
                start_cx=o["start"][0],
                start_cy=o["start"][1],
                velocity_x=o.get("velocity", [0, 0])[0],
                velocity_y=o.get("velocity", [0, 0])[1],
                w=o.get("size", [0.1, 0.1])[0],
                h=o.get("size", [0.1, 0.1])[1],
                enter_frame=o.get("enter", 0),
                exit_frame=o.get("exit"),
                dropout_frames=frozenset(o.get("dropout", ())),
            )
            for o in doc.get("objects", [])
        ]
        return cls(
            width=doc.get("width", 320),
            height=doc.get("height", 240),
            frame_count=doc.get("frames", 100),
            objects=objects,
        )


class SyntheticSource(FrameSource):
    def __init__(self, scene: SyntheticScene, fps: float | None = None, render_pixels: bool = True):
        self.scene = scene
        self.fps = fps
        self.render_pixels = render_pixels
        self.resolution = (scene.width, scene.height)

    def frames(self) -> Iterator[FrameRecord]:
        for frame_id in range(self.scene.frame_count):
            yield FrameRecord(
                frame_id=frame_id,
                timestamp_ns=time.monotonic_ns(),
                width=self.scene.width,
                height=self.scene.height,
                pixels=self.scene.render(frame_id) if self.render_pixels else None,
                truths=self.scene.truths_at(frame_id),
            )


class ImageDirectorySource(FrameSource):
    """Plays the images in a directory in sorted-name order."""

    def __init__(self, path: Path | str, fps: float | None = None):
        from ..annotations import IMAGE_EXTENSIONS

        self.root = Path(path)
        if not self.root.is_dir():
            raise SourceUnavailable(f"not a directory: {self.root}")
        self.paths = sorted(
            p for p in self.root.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not self.paths:
            raise SourceUnavailable(f"no images in {self.root}")
        self.fps = fps
        with _open_image(self.paths[0]) as im:
            self.resolution = im.size

    def frames(self) -> Iterator[FrameRecord]:
        for frame_id, path in enumerate(self.paths):
            with _open_image(path) as im:
                pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
            yield FrameRecord(
                frame_id=frame_id,
                timestamp_ns=time.monotonic_ns(),
                width=pixels.shape[1],
                height=pixels.shape[0],
                pixels=pixels,
            )


def _open_image(path: Path):
    from PIL import Image

    return Image.open(path)


class VideoFileSource(FrameSource):
    """Decodes a video file via OpenCV when available."""

    def __init__(self, path: Path | str, fps: float | None = None):
        try:
            import cv2
        except ImportError as e:
            raise SourceUnavailable(
                "video decoding needs opencv-python-headless (install the [video] extra)"
            ) from e
        self._cv2 = cv2
        self.path = str(path)
        if not Path(path).is_file():
            raise SourceUnavailable(f"video file not found: {path}")
        cap = cv2.VideoCapture(self.path)
        if not cap.isOpened():
            raise SourceUnavailable(f"cannot open video: {path}")
        self.fps = fps or (cap.get(cv2.CAP_PROP_FPS) or None)
        self.resolution = (
            int(cap.get(cv2.CAP_PROP_FRAME_WIDTH)),
            int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT)),
        )
        self._cap = cap

    def frames(self) -> Iterator[FrameRecord]:
        frame_id = 0
        while True:
            ok, bgr = self._cap.read()
            if not ok:
                break
            rgb = np.ascontiguousarray(bgr[:, :, ::-1])
            yield FrameRecord(
                frame_id=frame_id,
                timestamp_ns=time.monotonic_ns(),
                width=rgb.shape[1],
                height=rgb.shape[0],
                pixels=rgb,
            )
            frame_id += 1
        self._cap.release()


class CameraSource(VideoFileSource):
    def __init__(self, device_index: int = 0, fps: float | None = None):
        try:
            import cv2
        except ImportError as e:
            raise SourceUnavailable(
                "camera capture needs opencv-python-headless (install the [video] extra)"
            ) from e
        self._cv2 = cv2
        cap = cv2.VideoCapture(device_index)
        if not cap.isOpened():
            raise SourceUnavailable(f"cannot open camera device {device_index}")
        self.path = f"camera:{device_index}"
        self.fps = fps
        self.resolution = (
            int(cap.get(cv2.CAP_PROP_FRAME_WIDTH)),
            int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT)),
        )
        self._cap = cap


def build_source(descriptor: dict) -> FrameSource:
    """Instantiate a source from its config descriptor.

    Kinds: synthetic (inline scene), image_dir, recording, video, camera.
    """
    kind = descriptor.get("type")
    fps = descriptor.get("fps")
    if kind == "synthetic":
        return SyntheticSource(
            SyntheticScene.from_dict(descriptor),
            fps=fps,
            render_pixels=descriptor.get("render_pixels", True),
        )
    if kind == "image_dir":
        return ImageDirectorySource(descriptor["path"], fps=fps)
    if kind == "recording":
        from .recording import RecordingReplaySource

        return RecordingReplaySource(descriptor["path"], speed=descriptor.get("speed", 1.0))
    if kind == "video":
        return VideoFileSource(descriptor["path"], fps=fps)
    if kind == "camera":
        return CameraSource(descriptor.get("device", 0), fps=fps)
    raise SourceUnavailable(f"unknown source type {kind!r}")
