import numpy as np
import pytest

from fieldwatch.annotations import BoundingBox, Dataset, ImageAnnotation
from fieldwatch.augment import (
    AugmentationParams,
    AugmentationSpec,
    EmptyInput,
    ImageTooSmall,
    apply_augmentation,
    balance_dataset,
    dedupe_frames,
    draw_params,
    reject_blurry,
    sharpness_score,
    transform_boxes,
    transform_pixels,
)


def box(class_id, cx, cy, w, h):
    return BoundingBox.clamped(class_id, cx, cy, w, h)


def gray(width=32, height=24, value=128):
    return np.full((height, width, 3), value, dtype=np.uint8)


class TestDedupe:
    def test_identical_frames(self):
        assert dedupe_frames([gray(), gray()], 1.0) == [0]

    def test_alternating(self):
        frames = [gray(value=0), gray(value=255)] * 3
        assert dedupe_frames(frames, 1.0) == list(range(6))

    def test_every_tenth_differs(self):
        frames = []
        for i in range(100):
            frames.append(gray(value=(i // 10) * 20))
        assert dedupe_frames(frames, 1.0) == [0, 10, 20, 30, 40, 50, 60, 70, 80, 90]

    def test_empty(self):
        with pytest.raises(EmptyInput):
            dedupe_frames([], 1.0)

    def test_strictly_increasing_from_zero(self):
        rng = np.random.default_rng(0)
        frames = [rng.integers(0, 255, (16, 16, 3)).astype(np.uint8) for _ in range(30)]
        kept = dedupe_frames(frames, 10.0)
        assert kept[0] == 0
        assert all(a < b for a, b in zip(kept, kept[1:]))


class TestBlur:
    def test_uniform_rejected(self):
        keep, score = reject_blurry(gray(), 0.5)
        assert score == 0.0
        assert not keep

    def test_checkerboard_sharper_than_uniform(self):
        board = np.zeros((16, 16, 3), dtype=np.uint8)
        board[::2, ::2] = 255
        board[1::2, 1::2] = 255
        assert sharpness_score(board) > sharpness_score(gray(16, 16))

    def test_blurred_scores_lower(self):
        rng = np.random.default_rng(3)
        photo = rng.integers(0, 255, (40, 40, 3)).astype(np.uint8)
        # 5x5 box blur
        padded = np.pad(photo.astype(np.float64), ((2, 2), (2, 2), (0, 0)), mode="edge")
        blurred = np.zeros_like(photo, dtype=np.float64)
        for dy in range(5):
            for dx in range(5):
                blurred += padded[dy : dy + 40, dx : dx + 40]
        blurred = (blurred / 25).astype(np.uint8)
        assert sharpness_score(blurred) < sharpness_score(photo)

    def test_too_small(self):
        with pytest.raises(ImageTooSmall):
            sharpness_score(gray(2, 2))


class TestTransforms:
    def test_flip_mirrors_cx(self):
        params = AugmentationParams(flip=True, brightness=0, noise_sigma=0, crop=(0, 0, 0, 0))
        out = transform_boxes([box(0, 0.3, 0.5, 0.2, 0.2)], params)
        assert out == [BoundingBox(0, 0.7, 0.5, 0.2, 0.2)]

    def test_photometric_leaves_boxes(self):
        spec = AugmentationSpec(horizontal_flip=0.0, brightness_delta=40.0, gaussian_noise_sigma=3.0, seed=1)
        boxes = [box(0, 0.3, 0.5, 0.2, 0.2)]
        _, out = apply_augmentation(gray(), boxes, spec, draw=0)
        assert out == boxes

    def test_crop_hand_computed(self):
        # crop removes the left quarter; a box spanning x in [0.5, 0.9]
        # renormalizes to cx (0.7-0.25)/0.75, w 0.4/0.75
        params = AugmentationParams(flip=False, brightness=0, noise_sigma=0, crop=(0.25, 0.0, 0.0, 0.0))
        out = transform_boxes([box(0, 0.7, 0.5, 0.4, 0.2)], params)
        assert len(out) == 1
        assert out[0].cx == pytest.approx(0.6, abs=1e-12)
        assert out[0].w == pytest.approx(0.4 / 0.75, abs=1e-12)

    def test_crop_drops_mostly_hidden_boxes(self):
        # box x in [0.0, 0.2]; crop removes left 0.18 -> visible 10% < 25%
        params = AugmentationParams(flip=False, brightness=0, noise_sigma=0, crop=(0.18, 0.0, 0.0, 0.0))
        assert transform_boxes([box(0, 0.1, 0.5, 0.2, 0.2)], params) == []

    def test_double_flip_exact_on_pixels(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 255, (20, 30, 3)).astype(np.uint8)
        params = AugmentationParams(flip=True, brightness=0, noise_sigma=0, crop=(0, 0, 0, 0))
        spec = AugmentationSpec(seed=0)
        once = transform_pixels(img, params, spec, 0)
        twice = transform_pixels(once, params, spec, 0)
        assert np.array_equal(twice, img)

    def test_double_flip_exact_on_grid_boxes(self):
        # mirror-exact coordinates: dyadic rationals flip without rounding
        params = AugmentationParams(flip=True, brightness=0, noise_sigma=0, crop=(0, 0, 0, 0))
        rng = np.random.default_rng(9)
        scale = 2 ** 20
        for _ in range(500):
            w = (int(rng.integers(1, scale // 2)) * 2) / scale
            cx = (int(rng.integers(0, int((1 - w) * scale))) + w / 2 * scale) / scale
            b = box(0, cx, 0.5, w, 0.2)
            flipped = transform_boxes([b], params)
            back = transform_boxes(flipped, params)
            assert back == [b]

    def test_augmented_boxes_always_valid(self):
        rng = np.random.default_rng(4)
        spec = AugmentationSpec(horizontal_flip=0.5, brightness_delta=30, gaussian_noise_sigma=2, crop_fraction=0.3, seed=11)
        img = rng.integers(0, 255, (24, 24, 3)).astype(np.uint8)
        for draw in range(100):
            boxes = []
            for _ in range(5):
                w = float(rng.uniform(0.05, 0.5))
                h = float(rng.uniform(0.05, 0.5))
                cx = float(rng.uniform(w / 2, 1 - w / 2))
                cy = float(rng.uniform(h / 2, 1 - h / 2))
                boxes.append(box(0, cx, cy, w, h))
            _, out = apply_augmentation(img, boxes, spec, draw)
            for b in out:  # BoundingBox construction enforces invariants
                assert 0 <= b.cx <= 1 and 0 < b.w <= 1

    def test_bit_identical_repeat(self):
        rng = np.random.default_rng(4)
        spec = AugmentationSpec(horizontal_flip=0.5, brightness_delta=30, gaussian_noise_sigma=2, crop_fraction=0.2, seed=11)
        img = rng.integers(0, 255, (24, 24, 3)).astype(np.uint8)
        boxes = [box(0, 0.4, 0.4, 0.2, 0.2)]
        p1, b1 = apply_augmentation(img, boxes, spec, draw=3)
        p2, b2 = apply_augmentation(img, boxes, spec, draw=3)
        assert np.array_equal(p1, p2)
        assert b1 == b2

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            AugmentationSpec(crop_fraction=0.5)
        with pytest.raises(ValueError):
            AugmentationSpec(horizontal_flip=1.5)


class TestBalance:
    def _dataset(self, car_images, tank_images, car_boxes=1, tank_boxes=1):
        anns = []
        for i in range(car_images):
            anns.append(
                ImageAnnotation(f"car{i:02d}", 64, 64, tuple(box(0, 0.5, 0.5, 0.2, 0.2) for _ in range(car_boxes)))
            )
        for i in range(tank_images):
            anns.append(
                ImageAnnotation(f"tank{i:02d}", 64, 64, tuple(box(1, 0.5, 0.5, 0.2, 0.2) for _ in range(tank_boxes)))
            )
        return Dataset(["car", "tank"], anns)

    def test_balanced_unchanged(self):
        ds = self._dataset(4, 4)
        result = balance_dataset(ds, AugmentationSpec(seed=0), 1.5)
        assert result.dataset.annotations == ds.annotations
        assert result.additions == []

    def test_minority_boosted(self):
        ds = self._dataset(10, 10, car_boxes=4, tank_boxes=1)  # 40 car vs 10 tank
        result = balance_dataset(ds, AugmentationSpec(horizontal_flip=1.0, seed=0), 2.0)
        counts = result.dataset.class_box_counts()
        assert counts[1] >= 20
        assert counts[0] / counts[1] <= 2.0
        assert all(a.new_id.startswith(a.source_id) for a in result.additions)

    def test_deterministic(self):
        ds = self._dataset(6, 2, car_boxes=3)
        spec = AugmentationSpec(horizontal_flip=0.5, crop_fraction=0.1, seed=21)
        a = balance_dataset(ds, spec, 1.2)
        b = balance_dataset(ds, spec, 1.2)
        assert a.dataset.annotations == b.dataset.annotations
        assert a.manifest() == b.manifest()

    def test_cap_reported(self):
        # one tank image versus a sea of cars: 10 copies can't close the gap
        ds = self._dataset(50, 1, car_boxes=4, tank_boxes=1)
        result = balance_dataset(ds, AugmentationSpec(seed=0), 1.0)
        assert result.cap_reached
        assert len(result.additions) == 10
