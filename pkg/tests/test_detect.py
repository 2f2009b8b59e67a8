import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldwatch.annotations import BoundingBox
from fieldwatch.detect import (
    ClassListMismatch,
    ModelNotFound,
    OracleBackend,
    OracleConfig,
    UnsupportedBackend,
    filter_by_confidence,
    load_backend,
    nms,
    oracle_detect,
)
from fieldwatch.frames import FrameRecord
from fieldwatch.metrics import Detection, iou


def box(class_id, cx, cy, w, h):
    return BoundingBox.clamped(class_id, cx, cy, w, h)


def det(b, conf):
    return Detection(b, conf)


class TestFilter:
    def test_boundary_inclusive(self):
        dets = [det(box(0, 0.5, 0.5, 0.2, 0.2), c) for c in (0.9, 0.24, 0.25)]
        kept = filter_by_confidence(dets, 0.25)
        assert [d.confidence for d in kept] == [0.9, 0.25]

    def test_zero_threshold_identity(self):
        dets = [det(box(0, 0.5, 0.5, 0.2, 0.2), 0.1)]
        assert filter_by_confidence(dets, 0.0) == dets

    def test_one_threshold_empties(self):
        dets = [det(box(0, 0.5, 0.5, 0.2, 0.2), 0.99)]
        assert filter_by_confidence(dets, 1.0) == []


class TestNms:
    def test_suppresses_overlap(self):
        a = det(box(0, 0.5, 0.5, 0.3, 0.3), 0.9)
        b = det(box(0, 0.52, 0.5, 0.3, 0.3), 0.8)
        assert iou(a.box, b.box) > 0.5
        assert nms([a, b], 0.5) == [a]

    def test_classwise_independence(self):
        a = det(box(0, 0.5, 0.5, 0.3, 0.3), 0.9)
        b = det(box(1, 0.5, 0.5, 0.3, 0.3), 0.8)
        assert nms([a, b], 0.5) == [a, b]

    def test_chain_keeps_endpoints(self):
        # A-B and B-C overlap past the threshold, A-C does not: B is
        # suppressed by A, C survives because it only overlaps suppressed B
        a = det(box(0, 0.30, 0.5, 0.2, 0.2), 0.9)
        b = det(box(0, 0.35, 0.5, 0.2, 0.2), 0.8)
        c = det(box(0, 0.40, 0.5, 0.2, 0.2), 0.7)
        assert iou(a.box, b.box) == pytest.approx(0.6, abs=1e-9)
        assert iou(b.box, c.box) == pytest.approx(0.6, abs=1e-9)
        assert iou(a.box, c.box) < 0.5
        assert nms([a, b, c], 0.5) == [a, c]

    def test_output_sorted_by_confidence(self):
        dets = [
            det(box(0, 0.2, 0.2, 0.1, 0.1), 0.3),
            det(box(0, 0.8, 0.8, 0.1, 0.1), 0.9),
            det(box(1, 0.5, 0.5, 0.1, 0.1), 0.6),
        ]
        out = nms(dets, 0.5)
        assert [d.confidence for d in out] == [0.9, 0.6, 0.3]


@st.composite
def detection_lists(draw):
    n = draw(st.integers(0, 14))
    dets = []
    for _ in range(n):
        w = draw(st.floats(0.05, 0.5))
        h = draw(st.floats(0.05, 0.5))
        cx = draw(st.floats(0.0, 1.0)) * (1 - w) + w / 2
        cy = draw(st.floats(0.0, 1.0)) * (1 - h) + h / 2
        dets.append(det(box(draw(st.integers(0, 1)), cx, cy, w, h), draw(st.floats(0, 1))))
    return dets


@given(detection_lists(), st.floats(0.1, 0.9))
@settings(max_examples=80, deadline=None)
def test_nms_invariants(dets, threshold):
    kept = nms(dets, threshold)
    # subset of input
    assert all(k in dets for k in kept)
    # no two kept same-class boxes at or above threshold
    for i, a in enumerate(kept):
        for b in kept[i + 1 :]:
            if a.box.class_id == b.box.class_id:
                assert iou(a.box, b.box) < threshold
    # highest-confidence detection of each class survives
    for class_id in {d.box.class_id for d in dets}:
        top = max(
            (d for d in dets if d.box.class_id == class_id),
            key=lambda d: (d.confidence, -dets.index(d)),
        )
        assert top in kept
    # idempotence
    assert nms(kept, threshold) == kept


@given(detection_lists(), st.floats(0.1, 0.9), st.floats(0.0, 1.0))
@settings(max_examples=80, deadline=None)
def test_filter_after_nms_subset_of_nms_after_filter(dets, nms_threshold, conf_threshold):
    lhs = filter_by_confidence(nms(dets, nms_threshold), conf_threshold)
    rhs = nms(filter_by_confidence(dets, conf_threshold), nms_threshold)
    assert set(id(d) for d in lhs) <= set(id(d) for d in rhs)


def _truths(n, rng, class_count=2):
    out = []
    for _ in range(n):
        w = float(rng.uniform(0.05, 0.3))
        h = float(rng.uniform(0.05, 0.3))
        cx = float(rng.uniform(w / 2, 1 - w / 2))
        cy = float(rng.uniform(h / 2, 1 - h / 2))
        out.append(BoundingBox(int(rng.integers(0, class_count)), cx, cy, w, h))
    return out


class TestOracle:
    def test_degenerate_reproduces_truth(self):
        rng = np.random.default_rng(0)
        truths = _truths(8, rng)
        dets = oracle_detect(truths, OracleConfig(seed=1), frame_id=0)
        assert [d.box for d in dets] == truths
        assert all(0.5 <= d.confidence <= 1.0 for d in dets)

    def test_full_miss(self):
        rng = np.random.default_rng(0)
        truths = _truths(5, rng)
        assert oracle_detect(truths, OracleConfig(p_miss=1.0, seed=1), 0) == []

    def test_miss_rate_monte_carlo(self):
        rng = np.random.default_rng(0)
        config = OracleConfig(p_miss=0.1, seed=42)
        total = 0
        detected = 0
        for frame_id in range(100):
            truths = _truths(100, rng)
            total += len(truths)
            detected += len(oracle_detect(truths, config, frame_id))
        miss_fraction = 1 - detected / total
        assert abs(miss_fraction - 0.1) <= 0.01

    def test_deterministic_across_runs(self):
        rng = np.random.default_rng(0)
        truths = _truths(6, rng)
        config = OracleConfig(p_miss=0.3, jitter_sigma=0.01, fp_rate=1.5, seed=99)
        a = oracle_detect(truths, config, 7)
        b = oracle_detect(truths, config, 7)
        assert a == b
        # a different frame id gives a different draw
        c = oracle_detect(truths, config, 8)
        assert a != c or not truths

    def test_fp_only(self):
        config = OracleConfig(p_miss=1.0, fp_rate=3.0, seed=5)
        dets = oracle_detect(_truths(4, np.random.default_rng(1)), config, 0)
        assert all(0.05 <= d.confidence <= 0.5 for d in dets)
        assert all(0.02 <= d.box.w <= 0.3 + 1e-9 for d in dets)

    def test_jitter_keeps_boxes_valid(self):
        rng = np.random.default_rng(0)
        truths = _truths(50, rng)
        config = OracleConfig(jitter_sigma=0.2, seed=3)
        for frame_id in range(20):
            for d in oracle_detect(truths, config, frame_id):
                assert 0.0 <= d.box.cx <= 1.0
                assert d.box.w > 0

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OracleConfig(p_miss=1.5)
        with pytest.raises(ValueError):
            OracleConfig(tp_confidence=(0.9, 0.2))


class TestBackendLoading:
    def _write(self, tmp_path, doc):
        path = tmp_path / "backend.json"
        path.write_text(json.dumps(doc))
        return path

    def test_oracle_descriptor(self, tmp_path):
        path = self._write(
            tmp_path,
            {
                "backend": "oracle",
                "class_names": ["car", "tank"],
                "input_width": 416,
                "input_height": 416,
                "oracle": {"p_miss": 0.1, "seed": 4},
            },
        )
        backend = load_backend(path)
        assert isinstance(backend, OracleBackend)
        assert backend.config.p_miss == 0.1
        assert backend.config.class_count == 2

    def test_missing_descriptor(self, tmp_path):
        with pytest.raises(ModelNotFound):
            load_backend(tmp_path / "nope.json")

    def test_missing_model_file(self, tmp_path):
        path = self._write(
            tmp_path, {"backend": "external", "model_path": str(tmp_path / "weights.bin")}
        )
        with pytest.raises(ModelNotFound):
            load_backend(path)

    def test_class_mismatch(self, tmp_path):
        path = self._write(
            tmp_path, {"backend": "oracle", "class_names": ["a", "b", "c"], "oracle": {}}
        )
        with pytest.raises(ClassListMismatch):
            load_backend(path, expected_class_names=["car", "tank"])

    def test_external_unsupported(self, tmp_path):
        weights = tmp_path / "weights.bin"
        weights.write_bytes(b"\0")
        path = self._write(tmp_path, {"backend": "external", "model_path": str(weights)})
        with pytest.raises(UnsupportedBackend):
            load_backend(path)

    def test_oracle_backend_detects_frame_truths(self, tmp_path):
        backend = OracleBackend(OracleConfig(seed=0))
        truth = BoundingBox(0, 0.5, 0.5, 0.2, 0.2)
        frame = FrameRecord(0, 0, 100, 100, truths=(truth,))
        dets = backend.detect(frame)
        assert [d.box for d in dets] == [truth]
        assert backend.detect(FrameRecord(1, 0, 100, 100, truths=None)) == []
