"""Segment planning and region-adaptive greedy IoU association."""

from __future__ import annotations

import bisect
import enum
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import BBox, boxes_to_array, iou_matrix
from .ingest import Detection
from .regions import RegionSpec, classify_region


class Source(str, enum.Enum):
    DETECTED = "detected"
    INTERPOLATED = "interpolated"
    EXTRAPOLATED = "extrapolated"
    HCC = "hcc"


class Status(str, enum.Enum):
    MOVING = "moving"
    CANDIDATE = "stationary-candidate"
    STATIONARY = "stationary"


@dataclass(slots=True)
class TrackBox:
    box: BBox
    source: Source = Source.DETECTED
    confidence: float = 1.0
    det_id: int | None = None


@dataclass
class Track:
    id: int
    boxes: dict[int, TrackBox] = field(default_factory=dict)
    status: Status = Status.MOVING

    @property
    def frames(self) -> list[int]:
        return sorted(self.boxes)

    @property
    def first(self) -> int:
        return min(self.boxes)

    @property
    def last(self) -> int:
        return max(self.boxes)

    def copy(self) -> "Track":
        return Track(self.id, {f: TrackBox(b.box, b.source, b.confidence, b.det_id) for f, b in self.boxes.items()}, self.status)


@dataclass(frozen=True)
class SegmentPlan:
    n_frames: int
    segment_size: int
    keyframes: tuple[int, ...]
    segments: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "_kf_set", frozenset(self.keyframes))

    def is_keyframe(self, frame: int) -> bool:
        return frame in self._kf_set

    def segment_of(self, frame: int) -> tuple[int, int]:
        if not 1 <= frame <= self.n_frames:
            raise IndexError(frame)
        i = min(bisect.bisect_right(self.keyframes, frame) - 1, len(self.segments) - 1)
        return self.segments[i]

    def segments_within(self, first: int, last: int) -> tuple[tuple[int, int], ...]:
        """Segments whose both keyframes lie in ``[first, last]``."""
        lo = bisect.bisect_left(self.keyframes, first)
        hi = bisect.bisect_right(self.keyframes, last) - 1
        return self.segments[lo:hi] if hi > lo else ()


def plan_segments(n_frames: int, segment_size: int) -> SegmentPlan:
    """Keyframes every ``segment_size - 1`` frames from frame 1; the last frame is always one."""
    if n_frames < 2:
        raise ValueError("need at least two frames")
    if segment_size < 2:
        raise ValueError("segment size must be at least 2")
    kfs = list(range(1, n_frames + 1, segment_size - 1))
    if kfs[-1] != n_frames:
        kfs.append(n_frames)
    return SegmentPlan(n_frames, segment_size, tuple(kfs), tuple(zip(kfs, kfs[1:])))


class TrackStore:
    """Mutable set of tracks with a per-frame index."""

    def __init__(self) -> None:
        self.tracks: dict[int, Track] = {}
        self._frames: dict[int, dict[int, TrackBox]] = defaultdict(dict)
        self._det_owner: dict[tuple[int, int], int] = {}
        self._next_id = 1

    def new_track(self) -> int:
        tid = self._next_id
        self._next_id += 1
        self.tracks[tid] = Track(tid)
        return tid

    def add(self, tid: int, frame: int, tb: TrackBox) -> None:
        t = self.tracks[tid]
        if frame in t.boxes:
            raise ValueError(f"track {tid} already has a box in frame {frame}")
        t.boxes[frame] = tb
        self._frames[frame][tid] = tb
        if tb.det_id is not None and tb.source is Source.DETECTED:
            self._det_owner[(frame, tb.det_id)] = tid

    def at(self, frame: int) -> dict[int, TrackBox]:
        """Track id -> box for every track present in ``frame``."""
        return self._frames.get(frame, {})

    def owner(self, frame: int, det_id: int) -> int | None:
        return self._det_owner.get((frame, det_id))

    def merge(self, src: int, dst: int) -> bool:
        """Fold all of ``src`` into ``dst`` when their frames are disjoint."""
        if src == dst or self.tracks[src].boxes.keys() & self.tracks[dst].boxes.keys():
            return False
        return self.move_boxes(src, dst, after=0, force=True)

    def move_box(self, src: int, dst: int, frame: int) -> bool:
        s, d = self.tracks[src], self.tracks[dst]
        if src == dst or frame not in s.boxes or frame in d.boxes:
            return False
        tb = s.boxes.pop(frame)
        d.boxes[frame] = tb
        del self._frames[frame][src]
        self._frames[frame][dst] = tb
        if tb.det_id is not None and tb.source is Source.DETECTED:
            self._det_owner[(frame, tb.det_id)] = dst
        if not s.boxes:
            del self.tracks[src]
        return True

    def move_boxes(self, src: int, dst: int, after: int, force: bool = False) -> bool:
        """Move every box of ``src`` in frames > ``after`` into ``dst``.

        Refused (returns False) when ``dst`` already owns any frame > ``after``
        or ``src`` has nothing to move.
        """
        if src == dst:
            return False
        s, d = self.tracks[src], self.tracks[dst]
        moving = [f for f in s.boxes if f > after]
        if not moving or (not force and any(f > after for f in d.boxes)):
            return False
        for f in sorted(moving):
            tb = s.boxes.pop(f)
            del self._frames[f][src]
            d.boxes[f] = tb
            self._frames[f][dst] = tb
            if tb.det_id is not None and tb.source is Source.DETECTED:
                self._det_owner[(f, tb.det_id)] = dst
        if not s.boxes:
            del self.tracks[src]
        return True

    def result(self) -> list[Track]:
        out = []
        for tid in sorted(self.tracks):
            t = self.tracks[tid]
            t.boxes = dict(sorted(t.boxes.items()))
            out.append(t)
        return out


def associate_frames(
    prev: Sequence[tuple[int, BBox]],
    curr: Sequence[Detection],
    spec: RegionSpec,
) -> tuple[dict[int, int], list[Detection]]:
    """Greedy best-first IoU matching of previous-frame track boxes to detections.

    Returns ``{det_id: track_id}`` and the unmatched detections. A pair is
    eligible when its IoU reaches the threshold of the detection's ring; ties
    go to the lower track id, then the lower det_id.
    """
    if not prev or not curr:
        return {}, list(curr)
    m = iou_matrix(boxes_to_array([b for _, b in prev]), boxes_to_array([d.box for d in curr]))
    thr = np.array([spec.iou_thresholds[classify_region(d.box, spec)] for d in curr])
    ti, di = np.nonzero(m >= thr[None, :])
    cand = sorted(
        ((-m[i, j], prev[i][0], curr[j].det_id, i, j) for i, j in zip(ti.tolist(), di.tolist())),
    )
    used_t, used_d = set(), set()
    out: dict[int, int] = {}
    for _, tid, det_id, i, j in cand:
        if i in used_t or j in used_d:
            continue
        used_t.add(i)
        used_d.add(j)
        out[det_id] = tid
    unmatched = [d for j, d in enumerate(curr) if j not in used_d]
    return out, unmatched


def group_by_frame(dets: Iterable[Detection]) -> dict[int, list[Detection]]:
    by: dict[int, list[Detection]] = defaultdict(list)
    for d in dets:
        by[d.frame].append(d)
    for v in by.values():
        v.sort(key=lambda d: d.det_id)
    return dict(by)


def track_frame(store: TrackStore, frame: int, dets: Sequence[Detection], spec: RegionSpec) -> None:
    """Extend tracks present in ``frame - 1`` with the detections of ``frame``."""
    prev = sorted((tid, tb.box) for tid, tb in store.at(frame - 1).items())
    taken = store.at(frame)
    # tracks already holding a box in this frame cannot take another
    prev = [(tid, b) for tid, b in prev if tid not in taken]
    fresh = [d for d in dets if store.owner(frame, d.det_id) is None]
    matches, unmatched = associate_frames(prev, fresh, spec)
    by_id = {d.det_id: d for d in fresh}
    for det_id, tid in sorted(matches.items()):
        d = by_id[det_id]
        store.add(tid, frame, TrackBox(d.box, Source.DETECTED, d.confidence, d.det_id))
    for d in unmatched:
        store.add(store.new_track(), frame, TrackBox(d.box, Source.DETECTED, d.confidence, d.det_id))


def run_segment_tracking(
    dets_by_frame: Mapping[int, Sequence[Detection]],
    plan: SegmentPlan,
    spec: RegionSpec,
) -> list[Track]:
    """Chain frame-to-frame association across every segment of ``plan``."""
    store = TrackStore()
    for s, e in plan.segments:
        start = s if s == 1 else s + 1
        for f in range(start, e + 1):
            track_frame(store, f, dets_by_frame.get(f, ()), spec)
    return store.result()
