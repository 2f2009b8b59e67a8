"""fieldwatch: real-time object detection pipeline toolkit.

Label parsing and dataset handling, augmentation, a full mAP/IoU
evaluation engine, IoU tracking with object counting and alerts, a staged
real-time pipeline with FPS measurement and session recording, and a
line-protocol control/streaming server for operator consoles.
"""

from .annotations import (
    BoundingBox,
    Dataset,
    ImageAnnotation,
    emit_label_file,
    parse_label_file,
    split_dataset,
    validate_dataset,
)
from .detect import (
    DetectorBackend,
    OracleBackend,
    OracleConfig,
    filter_by_confidence,
    load_backend,
    nms,
    oracle_detect,
)
from .metrics import (
    Detection,
    EvalReport,
    average_precision,
    evaluate,
    iou,
    match_detections,
    precision_recall_curve,
)
from .tracking import AlertRule, CountState, Track, Tracker

__version__ = "0.1.0"

__all__ = [
    "AlertRule",
    "BoundingBox",
    "CountState",
    "Dataset",
    "Detection",
    "DetectorBackend",
    "EvalReport",
    "ImageAnnotation",
    "OracleBackend",
    "OracleConfig",
    "Track",
    "Tracker",
    "average_precision",
    "emit_label_file",
    "evaluate",
    "filter_by_confidence",
    "iou",
    "load_backend",
    "match_detections",
    "nms",
    "oracle_detect",
    "parse_label_file",
    "precision_recall_curve",
    "split_dataset",
    "validate_dataset",
]
