"""IoU association tracking, unique-object counting and count alerts.

A track is born tentative from an unmatched detection, confirmed after
confirm_hits consecutive matches (at which point it is counted, once,
toward its class), and lost after max_misses consecutive misses. No motion
model: association is greedy on IoU between a track's last box and the
frame's detections, which suits scenes that move slowly relative to frame
rate.

Counts never decrease. The tracker reports both cumulative unique counts
and the number of confirmed tracks visible in the current frame, since an
operator console may want either reading.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

from .annotations import BoundingBox
from .metrics import Detection, iou

DEFAULT_ASSOC_IOU = 0.3
DEFAULT_CONFIRM_HITS = 3
DEFAULT_MAX_MISSES = 10


class NonMonotonicFrame(ValueError):
    pass


class TrackState(str, enum.Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    LOST = "lost"


@dataclass
class Track:
    track_id: int
    class_id: int
    last_box: BoundingBox
    state: TrackState
    hits: int
    misses: int
    first_frame: int
    last_frame: int
    counted: bool = False


@dataclass(frozen=True)
class AlertRule:
    """Fires (once per run) when a count reaches the threshold.

    class_id None means the total count across classes. Comparators: ">="
    and "==".
    """

    rule_id: str
    comparator: str
    threshold: int
    class_id: int | None = None

    def __post_init__(self):
        if self.comparator not in (">=", "=="):
            raise ValueError(f"unsupported comparator {self.comparator!r}")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")

    def matches(self, count_state: "CountState") -> bool:
        if self.class_id is None:
            value = count_state.total
        else:
            value = count_state.per_class_count.get(self.class_id, 0)
        return value >= self.threshold if self.comparator == ">=" else value == self.threshold


@dataclass
class CountState:
    per_class_count: dict[int, int] = field(default_factory=dict)
    alerts_fired: list[tuple[int, str]] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(self.per_class_count.values())

    def snapshot(self) -> dict[int, int]:
        return dict(self.per_class_count)


def evaluate_alert_rules(
    count_state: CountState, rules: Sequence[AlertRule], frame_id: int
) -> list[tuple[int, str]]:
    """Latch rules whose predicate just became true; each fires at most
    once per run. Fired alerts are appended to count_state.alerts_fired."""
    already = {rule_id for _, rule_id in count_state.alerts_fired}
    fired = []
    for rule in rules:
        if rule.rule_id in already:
            continue
        if rule.matches(count_state):
            entry = (frame_id, rule.rule_id)
            count_state.alerts_fired.append(entry)
            fired.append(entry)
    return fired


@dataclass
class FrameUpdate:
    """Per-frame tracker output for logging and broadcast."""

    frame_id: int
    visible_counts: dict[int, int]
    cumulative_counts: dict[int, int]
    new_alerts: list[tuple[int, str]]
    confirmed_track_ids: list[int]


class Tracker:
    """Single-owner tracker; update() must be called in frame order."""

    def __init__(
        self,
        assoc_iou_threshold: float = DEFAULT_ASSOC_IOU,
        confirm_hits: int = DEFAULT_CONFIRM_HITS,
        max_misses: int = DEFAULT_MAX_MISSES,
        rules: Sequence[AlertRule] = (),
    ):
        if confirm_hits < 1 or max_misses < 1:
            raise ValueError("confirm_hits and max_misses must be >= 1")
        self.assoc_iou_threshold = assoc_iou_threshold
        self.confirm_hits = confirm_hits
        self.max_misses = max_misses
        self.rules = list(rules)
        self.tracks: list[Track] = []
        self.counts = CountState()
        self._next_id = 1
        self._last_frame: int | None = None

    def update(self, detections: Sequence[Detection], frame_id: int) -> FrameUpdate:
        """Associate one frame's (post-NMS) detections with live tracks.

        Greedy on descending IoU; ties prefer the older track, then the
        lower detection index. Raises NonMonotonicFrame if frame_id does
        not advance.
        """
        if self._last_frame is not None and frame_id <= self._last_frame:
            raise NonMonotonicFrame(f"frame {frame_id} after frame {self._last_frame}")
        self._last_frame = frame_id

        live = [t for t in self.tracks if t.state != TrackState.LOST]
        candidates = []
        for t_pos, track in enumerate(live):
            for d_idx, det in enumerate(detections):
                if det.box.class_id != track.class_id:
                    continue
                v = iou(track.last_box, det.box)
                if v >= self.assoc_iou_threshold:
                    candidates.append((v, track.track_id, d_idx, t_pos))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))

        matched_tracks: set[int] = set()
        matched_dets: set[int] = set()
        assignments: list[tuple[int, int]] = []
        for _, _, d_idx, t_pos in candidates:
            if t_pos in matched_tracks or d_idx in matched_dets:
                continue
            matched_tracks.add(t_pos)
            matched_dets.add(d_idx)
            assignments.append((t_pos, d_idx))

        newly_confirmed: list[int] = []
        for t_pos, d_idx in assignments:
            track = live[t_pos]
            track.last_box = detections[d_idx].box
            track.hits += 1
            track.misses = 0
            track.last_frame = frame_id
            if track.state == TrackState.TENTATIVE and track.hits >= self.confirm_hits:
                track.state = TrackState.CONFIRMED
            if track.state == TrackState.CONFIRMED and not track.counted:
                track.counted = True
                self.counts.per_class_count[track.class_id] = (
                    self.counts.per_class_count.get(track.class_id, 0) + 1
                )
                newly_confirmed.append(track.track_id)

        for t_pos, track in enumerate(live):
            if t_pos in matched_tracks:
                continue
            track.misses += 1
            track.hits = 0
            if track.misses >= self.max_misses:
                track.state = TrackState.LOST

        for d_idx, det in enumerate(detections):
            if d_idx in matched_dets:
                continue
            state = TrackState.CONFIRMED if self.confirm_hits <= 1 else TrackState.TENTATIVE
            track = Track(
                track_id=self._next_id,
                class_id=det.box.class_id,
                last_box=det.box,
                state=state,
                hits=1,
                misses=0,
                first_frame=frame_id,
                last_frame=frame_id,
            )
            self._next_id += 1
            self.tracks.append(track)
            if state == TrackState.CONFIRMED:
                track.counted = True
                self.counts.per_class_count[track.class_id] = (
                    self.counts.per_class_count.get(track.class_id, 0) + 1
                )
                newly_confirmed.append(track.track_id)

        self.tracks = [t for t in self.tracks if t.state != TrackState.LOST]

        new_alerts = evaluate_alert_rules(self.counts, self.rules, frame_id)
        visible: dict[int, int] = {}
        for track in self.tracks:
            if track.state == TrackState.CONFIRMED and track.last_frame == frame_id:
                visible[track.class_id] = visible.get(track.class_id, 0) + 1
        return FrameUpdate(
            frame_id=frame_id,
            visible_counts=visible,
            cumulative_counts=self.counts.snapshot(),
            new_alerts=new_alerts,
            confirmed_track_ids=newly_confirmed,
        )
