"""Staged live pipeline and session lifecycle.

Three stages — capture, inference, sink (track/count/record/broadcast) —
run as threads joined by bounded queues. The capture-to-inference queue
drops its oldest frame under back-pressure so a slow backend sees fresh
frames and capture-to-broadcast latency stays bounded; every dropped frame
is still accounted for in the detection log, which therefore covers a
contiguous range of frame ids.

A PipelineService owns the control state machine (idle -> running ->
stopped, restartable with a fresh session id and zeroed counts) and fans
stream messages out through a BroadcastHub.
"""

from __future__ import annotations

import enum
import json
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from ..annotations import Dataset, ImageAnnotation
from ..detect import (
    DEFAULT_CONFIDENCE_THRESHOLD,
    DEFAULT_NMS_THRESHOLD,
    DetectorBackend,
    ThrottledBackend,
    filter_by_confidence,
    load_backend,
    nms,
)
from ..metrics import EvalReport, evaluate
from ..tracking import (
    DEFAULT_ASSOC_IOU,
    DEFAULT_CONFIRM_HITS,
    DEFAULT_MAX_MISSES,
    AlertRule,
    Tracker,
)
from . import logfmt
from .fps import FpsMeter
from .hub import BroadcastHub
from .recording import Recorder
from .sources import FrameSource, build_source


class InvalidTransition(Exception):
    pass


class BackendFailure(Exception):
    pass


class SessionStatus(str, enum.Enum):
    IDLE = "idle"
    RUNNING = "running"
    STOPPED = "stopped"


@dataclass
class RunConfig:
    """Parsed run configuration (see External Interfaces in the README)."""

    source: dict
    backend: dict | str | Path
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD
    nms_threshold: float = DEFAULT_NMS_THRESHOLD
    assoc_iou_threshold: float = DEFAULT_ASSOC_IOU
    confirm_hits: int = DEFAULT_CONFIRM_HITS
    max_misses: int = DEFAULT_MAX_MISSES
    alert_rules: list[AlertRule] = field(default_factory=list)
    output_dir: Path | None = None
    record: bool = False
    backend_max_fps: float | None = None
    evaluate_against_truth: bool = False
    iou_thresholds: tuple[float, ...] = (0.5, 0.75)
    queue_capacity: int = 4
    broadcast_buffer: int = 32
    fps_smoothing: float = 0.1

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "RunConfig":
        base = base_dir or Path(".")
        backend = doc["backend"]
        if isinstance(backend, str):
            backend = str((base / backend).resolve())
        tracker = doc.get("tracker", {})
        rules = [
            AlertRule(
                rule_id=r["rule_id"],
                comparator=r.get("comparator", ">="),
                threshold=r["threshold"],
                class_id=r.get("class_id"),
            )
            for r in doc.get("alert_rules", [])
        ]
        output_dir = doc.get("output_dir")
        if output_dir is not None:
            output_dir = (base / output_dir).resolve()
        source = dict(doc["source"])
        if "path" in source:
            source["path"] = str((base / source["path"]).resolve())
        return cls(
            source=source,
            backend=backend,
            confidence_threshold=doc.get("confidence_threshold", DEFAULT_CONFIDENCE_THRESHOLD),
            nms_threshold=doc.get("nms_threshold", DEFAULT_NMS_THRESHOLD),
            assoc_iou_threshold=tracker.get("assoc_iou_threshold", DEFAULT_ASSOC_IOU),
            confirm_hits=tracker.get("confirm_hits", DEFAULT_CONFIRM_HITS),
            max_misses=tracker.get("max_misses", DEFAULT_MAX_MISSES),
            alert_rules=rules,
            output_dir=output_dir,
            record=doc.get("record", False),
            backend_max_fps=doc.get("backend_max_fps"),
            evaluate_against_truth=doc.get("evaluate", False),
            iou_thresholds=tuple(doc.get("iou_thresholds", (0.5, 0.75))),
            queue_capacity=doc.get("queue_capacity", 4),
            broadcast_buffer=doc.get("broadcast_buffer", 32),
        )

    @classmethod
    def from_file(cls, path: Path | str) -> "RunConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), path.parent)

    def snapshot(self) -> dict:
        doc = {
            "source": self.source,
            "backend": str(self.backend) if isinstance(self.backend, (str, Path)) else self.backend,
            "confidence_threshold": self.confidence_threshold,
            "nms_threshold": self.nms_threshold,
            "tracker": {
                "assoc_iou_threshold": self.assoc_iou_threshold,
                "confirm_hits": self.confirm_hits,
                "max_misses": self.max_misses,
            },
            "alert_rules": [
                {
                    "rule_id": r.rule_id,
                    "comparator": r.comparator,
                    "threshold": r.threshold,
                    "class_id": r.class_id,
                }
                for r in self.alert_rules
            ],
            "output_dir": str(self.output_dir) if self.output_dir else None,
            "record": self.record,
            "backend_max_fps": self.backend_max_fps,
            "evaluate": self.evaluate_against_truth,
            "iou_thresholds": list(self.iou_thresholds),
            "queue_capacity": self.queue_capacity,
            "broadcast_buffer": self.broadcast_buffer,
        }
        return doc


@dataclass
class RunArtifact:
    """Everything a finished session leaves behind."""

    session_id: int
    config_snapshot: dict
    log_lines: list[str]
    counts_cumulative: dict[str, int]
    counts_visible_last: dict[str, int]
    alerts: list[tuple[int, str]]
    fps: float
    resolution: tuple[int, int]
    frames_processed: int
    frames_dropped: int
    recordings: list[Path]
    report: EvalReport | None = None
    output_dir: Path | None = None
    error: str | None = None
    started_at: float = 0.0
    stopped_at: float = 0.0


class _DropOldestQueue:
    """Bounded FIFO; put() evicts the oldest entry instead of blocking."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: deque = deque()
        self._cond = threading.Condition()
        self._closed = False

    def put(self, item):
        with self._cond:
            dropped = None
            if len(self._items) >= self.capacity:
                dropped = self._items.popleft()
            self._items.append(item)
            self._cond.notify()
            return dropped

    def get(self, timeout: float):
        with self._cond:
            if not self._items:
                self._cond.wait_for(lambda: self._items or self._closed, timeout)
            if self._items:
                return self._items.popleft()
            return None

    def close(self):
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def __len__(self):
        with self._cond:
            return len(self._items)


class _OrderedLog:
    """Collects per-frame log lines and releases them in frame-id order.

    Drop notices and processed-frame lines arrive from different threads
    slightly out of order; a small reorder buffer restores the contiguous
    sequence before anything is written.
    """

    def __init__(self, path: Path | None):
        self.lines: list[str] = []
        self._pending: dict[int, str] = {}
        self._next: int | None = None
        self._file = path.open("w", encoding="utf-8") if path else None
        self._lock = threading.Lock()

    def start(self, first_frame_id: int) -> None:
        """Declare the session's first frame id; must precede its entry."""
        with self._lock:
            if self._next is None:
                self._next = first_frame_id

    def add(self, frame_id: int, line: str) -> None:
        with self._lock:
            self._pending[frame_id] = line
            if self._next is None:
                self._next = min(self._pending)
            while self._next in self._pending:
                self._emit(self._pending.pop(self._next))
                self._next += 1

    def _emit(self, line: str) -> None:
        self.lines.append(line)
        if self._file:
            self._file.write(line + "\n")

    def close(self) -> None:
        with self._lock:
            for frame_id in sorted(self._pending):
                self._emit(self._pending.pop(frame_id))
            if self._file:
                self._file.close()
                self._file = None


def _build_backend(spec: dict | str | Path) -> tuple[DetectorBackend, list[str]]:
    if isinstance(spec, (str, Path)):
        backend = load_backend(spec)
        names = json.loads(Path(spec).read_text(encoding="utf-8")).get("class_names", [])
        return backend, list(names)
    from ..detect import backend_from_descriptor

    return backend_from_descriptor(dict(spec)), list(spec.get("class_names", []))


class _SessionRunner:
    def __init__(
        self,
        config: RunConfig,
        hub: BroadcastHub,
        session_id: int,
        recording_requested,
        on_finish=None,
    ):
        self.config = config
        self.hub = hub
        self.session_id = session_id
        self._recording_requested = recording_requested
        self._on_finish = on_finish

        self.source: FrameSource = build_source(config.source)
        backend, names = _build_backend(config.backend)
        if config.backend_max_fps:
            backend = ThrottledBackend(backend, config.backend_max_fps)
        self.backend = backend
        self.class_names = names or getattr(self.source, "class_names", []) or []
        self.tracker = Tracker(
            assoc_iou_threshold=config.assoc_iou_threshold,
            confirm_hits=config.confirm_hits,
            max_misses=config.max_misses,
            rules=config.alert_rules,
        )
        self.meter = FpsMeter(config.fps_smoothing)
        self.stop_event = threading.Event()
        self.error: str | None = None
        self.started_at = time.time()  # wall clock, metadata only

        self.out_dir = config.output_dir
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        self.log = _OrderedLog(self.out_dir / "detections.log" if self.out_dir else None)
        self.recordings: list[Path] = []
        self.frames_processed = 0
        self.frames_dropped = 0
        self.last_visible: dict[str, int] = {}
        self.eval_rows: list[tuple[int, ImageAnnotation, list]] = []
        self.artifact: RunArtifact | None = None

        self._q_frames = _DropOldestQueue(config.queue_capacity)
        self._q_results: queue.Queue = queue.Queue(maxsize=config.queue_capacity)
        self._capture_done = threading.Event()
        self._infer_done = threading.Event()
        self._sink_dead = threading.Event()
        self._drop_lock = threading.Lock()
        self._threads: list[threading.Thread] = []

    # -- stages ------------------------------------------------------------

    def _capture(self):
        fps = self.source.fps
        period_ns = int(1e9 / fps) if fps else None
        next_due = time.monotonic_ns()
        started = False
        try:
            for frame in self.source.frames():
                if self.stop_event.is_set():
                    break
                if not started:
                    self.log.start(frame.frame_id)
                    started = True
                if period_ns:
                    now = time.monotonic_ns()
                    delay = next_due - now
                    if delay > 0:
                        time.sleep(delay / 1e9)
                    else:
                        next_due = now  # don't accumulate schedule debt
                    next_due += period_ns
                frame.timestamp_ns = time.monotonic_ns()
                dropped = self._q_frames.put(frame)
                if dropped is not None:
                    self._record_drop(dropped.frame_id)
        except Exception as e:  # source failure is fail-stop
            self.error = self.error or f"source: {e}"
            self.stop_event.set()
        finally:
            self._capture_done.set()
            self._q_frames.close()

    def _record_drop(self, frame_id: int) -> None:
        with self._drop_lock:
            self.frames_dropped += 1
        self.log.add(frame_id, logfmt.log_line(frame_id, [], dropped=True))

    def _inference(self):
        try:
            while True:
                frame = self._q_frames.get(timeout=0.05)
                if frame is None:
                    if self._capture_done.is_set() and len(self._q_frames) == 0:
                        break
                    continue
                try:
                    detections = self.backend.detect(frame)
                    detections = filter_by_confidence(detections, self.config.confidence_threshold)
                    detections = nms(detections, self.config.nms_threshold)
                except Exception as e:
                    self.error = self.error or f"backend: {e}"
                    self._fail_stop(frame)
                    break
                done_ns = time.monotonic_ns()
                placed = False
                while not placed:
                    try:
                        self._q_results.put((frame, detections, done_ns), timeout=0.2)
                        placed = True
                    except queue.Full:
                        if self._sink_dead.is_set():
                            self.error = self.error or "pipeline: broadcast stage failed"
                            self._fail_stop(frame)
                            return
        finally:
            self._infer_done.set()

    def _fail_stop(self, failing_frame) -> None:
        """Stop the run but keep the log a contiguous prefix: the failing
        frame and everything still queued become drop entries."""
        self.stop_event.set()
        self._record_drop(failing_frame.frame_id)
        self._capture_done.wait(timeout=5.0)
        while True:
            frame = self._q_frames.get(timeout=0.0)
            if frame is None:
                break
            self._record_drop(frame.frame_id)

    def _sink(self):
        recorder: Recorder | None = None
        try:
            while True:
                try:
                    frame, detections, done_ns = self._q_results.get(timeout=0.05)
                except queue.Empty:
                    if self._infer_done.is_set() and self._q_results.empty():
                        break
                    continue
                fps_now = self.meter.tick(done_ns)
                update = self.tracker.update(detections, frame.frame_id)
                self.frames_processed += 1
                self.log.add(frame.frame_id, logfmt.log_line(frame.frame_id, detections))

                if self.config.evaluate_against_truth and frame.truths is not None:
                    ann = ImageAnnotation(
                        f"frame_{frame.frame_id:06d}", frame.width, frame.height, frame.truths
                    )
                    self.eval_rows.append((frame.frame_id, ann, detections))

                want_recording = bool(self._recording_requested())
                if want_recording and recorder is None:
                    path = self._recording_path(len(self.recordings))
                    recorder = Recorder(path, (frame.width, frame.height), self.class_names)
                    self.recordings.append(path)
                elif not want_recording and recorder is not None:
                    recorder.close()
                    recorder = None
                if recorder is not None:
                    try:
                        recorder.write(frame, detections)
                    except OSError as e:  # disk full: stop recording, keep running
                        recorder.close()
                        recorder = None
                        self.hub.publish(
                            {"type": "alert", "frame_id": frame.frame_id, "rule": f"recording-failed: {e}"}
                        )

                visible = self._named_counts(update.visible_counts)
                cumulative = self._named_counts(update.cumulative_counts)
                self.last_visible = visible
                self.hub.publish(
                    {
                        "type": "frame",
                        "frame_id": frame.frame_id,
                        "timestamp_ns": frame.timestamp_ns,
                        "detections": [logfmt.detection_to_dict(d) for d in detections],
                        "counts_visible": visible,
                        "counts_total": cumulative,
                        "fps": fps_now,
                        "resolution": [frame.width, frame.height],
                        "status": SessionStatus.RUNNING.value,
                        "recording": recorder is not None,
                    }
                )
                for alert_frame, rule_id in update.new_alerts:
                    self.hub.publish({"type": "alert", "frame_id": alert_frame, "rule": rule_id})
        except Exception as e:
            self.error = self.error or f"pipeline: {e}"
            self.stop_event.set()
            self._sink_dead.set()
        finally:
            if recorder is not None:
                recorder.close()

    def _recording_path(self, index: int) -> Path:
        stem = f"recording_{index:03d}.jsonl"
        if self.out_dir:
            return self.out_dir / stem
        return Path(stem)

    def _named_counts(self, counts: dict[int, int]) -> dict[str, int]:
        out = {}
        for class_id, n in sorted(counts.items()):
            if class_id < len(self.class_names):
                out[self.class_names[class_id]] = n
            else:
                out[f"class{class_id}"] = n
        return out

    # -- lifecycle ----------------------------------------------------------

    def start(self):
        for fn in (self._capture, self._inference, self._sink):
            t = threading.Thread(target=fn, name=f"fieldwatch-{fn.__name__}-{self.session_id}", daemon=True)
            self._threads.append(t)
            t.start()

    def request_stop(self):
        self.stop_event.set()

    def join(self, timeout: float | None = None):
        deadline = None if timeout is None else time.monotonic() + timeout
        for t in self._threads:
            remaining = None if deadline is None else max(deadline - time.monotonic(), 0.0)
            t.join(remaining)

    def finalize(self) -> RunArtifact:
        self.log.close()
        report = None
        if self.eval_rows:
            class_names = self.class_names or ["class0", "class1"]
            dataset = Dataset(class_names, [ann for _, ann, _ in self.eval_rows])
            detections_by_image = {ann.image_id: dets for _, ann, dets in self.eval_rows}
            report = evaluate(
                detections_by_image,
                dataset,
                self.config.iou_thresholds,
                self.config.confidence_threshold,
                fps=self.meter.fps,
                network=self.backend.name,
            )
        artifact = RunArtifact(
            session_id=self.session_id,
            config_snapshot=self.config.snapshot(),
            log_lines=self.log.lines,
            counts_cumulative=self._named_counts(self.tracker.counts.per_class_count),
            counts_visible_last=self.last_visible,
            alerts=list(self.tracker.counts.alerts_fired),
            fps=self.meter.fps,
            resolution=self.source.resolution,
            frames_processed=self.frames_processed,
            frames_dropped=self.frames_dropped,
            recordings=list(self.recordings),
            report=report,
            output_dir=self.out_dir,
            error=self.error,
            started_at=self.started_at,
            stopped_at=time.time(),
        )
        if self.out_dir:
            (self.out_dir / "config.snapshot").write_text(
                json.dumps(artifact.config_snapshot, indent=2, sort_keys=True) + "\n",
                encoding="utf-8",
            )
            summary = {
                "session_id": artifact.session_id,
                "counts_total": artifact.counts_cumulative,
                "counts_visible_last": artifact.counts_visible_last,
                "alerts": [{"frame_id": f, "rule": r} for f, r in artifact.alerts],
                "fps": artifact.fps,
                "resolution": list(artifact.resolution),
                "frames_processed": artifact.frames_processed,
                "frames_dropped": artifact.frames_dropped,
                "recordings": [p.name for p in artifact.recordings],
                "recording_format": "jsonl+zlib-rgb24",
                "started_at": artifact.started_at,
                "stopped_at": artifact.stopped_at,
                "error": artifact.error,
            }
            (self.out_dir / "summary.json").write_text(
                json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            if report is not None:
                (self.out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
                (self.out_dir / "report.txt").write_text(report.render_text() + "\n", encoding="utf-8")
        self.artifact = artifact
        return artifact


class PipelineService:
    """Owns the control state machine and the broadcast hub.

    Control commands arrive serialized through handle_control; each start
    spawns a fresh runner with a new session id and zeroed counts.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.hub = BroadcastHub()
        self.status = SessionStatus.IDLE
        self.recording_requested = config.record
        self.session_id = 0
        self._runner: _SessionRunner | None = None
        self._lock = threading.RLock()
        self._finished = threading.Event()
        self.last_artifact: RunArtifact | None = None

    # -- state machine -------------------------------------------------------

    def handle_control(self, cmd: str) -> dict:
        with self._lock:
            if cmd == "start":
                if self.status == SessionStatus.RUNNING:
                    raise InvalidTransition("session already running")
                self._start_session()
            elif cmd == "stop":
                if self.status != SessionStatus.RUNNING:
                    raise InvalidTransition("no session running")
                self._stop_session()
            elif cmd == "record_on":
                if self.status != SessionStatus.RUNNING:
                    raise InvalidTransition("recording requires a running session")
                if self.recording_requested:
                    raise InvalidTransition("already recording")
                self.recording_requested = True
            elif cmd == "record_off":
                if self.status != SessionStatus.RUNNING or not self.recording_requested:
                    raise InvalidTransition("not recording")
                self.recording_requested = False
            else:
                raise InvalidTransition(f"unknown command {cmd!r}")
            message = self.state_message()
        self.hub.publish(message)
        return message

    def state_message(self) -> dict:
        with self._lock:
            runner = self._runner
            resolution = runner.source.resolution if runner else (0, 0)
            class_names = runner.class_names if runner else []
            return {
                "type": "state",
                "status": self.status.value,
                "recording": bool(self.recording_requested and self.status == SessionStatus.RUNNING),
                "session_id": self.session_id,
                "resolution": list(resolution),
                "class_names": class_names,
            }

    def _start_session(self):
        runner = _SessionRunner(
            self.config,
            self.hub,
            self.session_id + 1,
            recording_requested=lambda: self.recording_requested,
        )
        self.session_id += 1
        self._finished.clear()
        self.recording_requested = self.config.record
        self._runner = runner
        self.status = SessionStatus.RUNNING
        watcher = threading.Thread(target=self._watch, args=(runner,), daemon=True)
        runner.start()
        watcher.start()

    def _stop_session(self):
        runner = self._runner
        if runner:
            runner.request_stop()
            runner.join(timeout=30.0)
        self._finish(runner)

    def _watch(self, runner: _SessionRunner):
        runner.join()
        with self._lock:
            if self._runner is runner and self.status == SessionStatus.RUNNING:
                self._finish(runner)
                message = self.state_message()
            else:
                return
        self.hub.publish(message)

    def _finish(self, runner: _SessionRunner | None):
        if runner and runner.artifact is None:
            self.last_artifact = runner.finalize()
        self.status = SessionStatus.STOPPED
        self._finished.set()

    def wait(self, timeout: float | None = None) -> RunArtifact | None:
        self._finished.wait(timeout)
        return self.last_artifact

    def close(self):
        with self._lock:
            if self.status == SessionStatus.RUNNING:
                self._stop_session()
        self.hub.close()


def run_session(config: RunConfig) -> RunArtifact:
    """Run one session to completion (end of source or error) and return
    its artifact. Raises BackendFailure after flushing a partial artifact
    when the backend fails mid-run."""
    service = PipelineService(config)
    service.handle_control("start")
    artifact = service.wait()
    service.close()
    assert artifact is not None
    if artifact.error and artifact.error.startswith("backend:"):
        raise BackendFailure(artifact.error)
    return artifact
