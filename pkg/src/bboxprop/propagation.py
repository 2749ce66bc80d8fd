"""Bounding-box propagation between keyframes and intermediate frames.

Three passes add boxes that the detector missed:

* keyframe -> intermediate frames: pair boxes of the two keyframes of a
  segment by path IoU and fill the frames between them by interpolation;
* intermediate frames -> keyframes: extrapolate tracked intermediate-frame
  pairs into keyframes that lack the car, gated by a validator;
* high-confidence cars: walk confident tracks frame by frame past their
  ends until too many co-located or rejected attempts.

A final stationary filter drops tracks whose keyframe centers never move.
Detected boxes are never removed; every added box carries its own source tag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Protocol, Sequence

import numpy as np

from .geometry import BBox, boxes_to_array, extrapolate_box, interpolate_box, iou, iou_matrix
from .ingest import Detection, GroundTruthBox
from .regions import RegionSpec, SceneClass, classify_region
from .tracker import SegmentPlan, Source, Status, Track, TrackBox, TrackStore


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PropagationConfig:
    hcc_threshold: float = 0.8
    attempt_limit_existing: int = 3
    attempt_limit_failure: int = 3
    consistency_thresholds: tuple[float, ...] | None = None
    stationary_eps_factor: float = 0.1
    stationary_center_eps: float | None = None
    kf_to_if: bool = True
    if_to_kf: bool = True
    hcc: bool = True
    hcc_merge_existing: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.hcc_threshold < 1.0:
            raise ConfigError("hcc_threshold must lie in (0, 1)")
        if self.attempt_limit_existing < 1 or self.attempt_limit_failure < 1:
            raise ConfigError("attempt limits must be >= 1")
        if self.consistency_thresholds is not None and any(
            not 0.0 < t < 1.0 for t in self.consistency_thresholds
        ):
            raise ConfigError("consistency thresholds must lie in (0, 1)")
        if self.stationary_eps_factor <= 0:
            raise ConfigError("stationary_eps_factor must be positive")

    def consistency_threshold(self, ring: int, spec: RegionSpec) -> float:
        return (self.consistency_thresholds or spec.iou_thresholds)[ring]

    def to_dict(self) -> dict:
        return {
            "hcc_threshold": self.hcc_threshold,
            "attempt_limit_existing": self.attempt_limit_existing,
            "attempt_limit_failure": self.attempt_limit_failure,
            "consistency_thresholds": list(self.consistency_thresholds) if self.consistency_thresholds else None,
            "stationary_eps_factor": self.stationary_eps_factor,
            "stationary_center_eps": self.stationary_center_eps,
            "kf_to_if": self.kf_to_if,
            "if_to_kf": self.if_to_kf,
            "hcc": self.hcc,
            "hcc_merge_existing": self.hcc_merge_existing,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PropagationConfig":
        d = dict(d)
        if d.get("consistency_thresholds") is not None:
            d["consistency_thresholds"] = tuple(d["consistency_thresholds"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown propagation keys: {sorted(unknown)}")
        return cls(**d)


# -- validators -------------------------------------------------------------


class Validator(Protocol):
    def __call__(self, frame: int, box: BBox) -> bool: ...


class ConstantValidator:
    def __init__(self, accept: bool) -> None:
        self.accept = accept
        self.calls = 0

    def __call__(self, frame: int, box: BBox) -> bool:
        self.calls += 1
        return self.accept


class OracleValidator:
    """Accepts a box iff some ground-truth car overlaps it with IoU >= ``iou_threshold``.

    ``flip_prob`` inverts the answer at random to mimic an imperfect
    classifier; the draw sequence is fixed by ``seed``.
    """

    def __init__(
        self,
        gt: Iterable[GroundTruthBox],
        iou_threshold: float = 0.5,
        flip_prob: float = 0.0,
        seed: int = 0,
    ) -> None:
        if not 0.0 <= flip_prob <= 1.0:
            raise ConfigError("flip_prob must lie in [0, 1]")
        by_frame: dict[int, list[BBox]] = {}
        for g in gt:
            by_frame.setdefault(g.frame, []).append(g.box)
        self._gt = {f: boxes_to_array(v) for f, v in by_frame.items()}
        self.iou_threshold = iou_threshold
        self.flip_prob = flip_prob
        self._rng = np.random.default_rng(seed)
        self.calls = 0

    def __call__(self, frame: int, box: BBox) -> bool:
        self.calls += 1
        arr = self._gt.get(frame)
        ok = arr is not None and float(iou_matrix(box.as_array(), arr).max()) >= self.iou_threshold
        if self.flip_prob > 0.0 and self._rng.random() < self.flip_prob:
            ok = not ok
        return ok


# -- path IoU ---------------------------------------------------------------


class PathCandidate(NamedTuple):
    start_track: int
    end_track: int
    start_box: BBox
    end_box: BBox
    interpolated: list[BBox]
    path_iou: float
    valid: bool


def path_iou(start: BBox, end: BBox, if_detections: Sequence[Sequence]) -> float:
    """Mean over intermediate frames of how well the interpolated box is observed.

    ``if_detections`` holds one list per intermediate frame (detections or
    bare boxes). For each frame the score is the best IoU between the
    interpolated box and that frame's detections; when nothing overlaps it
    falls back to the IoU with the nearer endpoint box, so a car the
    motion-sensitive detector cannot see still scores by its own motion.
    """
    n = len(if_detections)
    if n == 0:
        raise ValueError("a path needs at least one intermediate frame")
    total = 0.0
    for i, dets in enumerate(if_detections, start=1):
        t = i / (n + 1)
        f = interpolate_box(start, end, t)
        best = max((iou(f, getattr(d, "box", d)) for d in dets), default=0.0)
        if best <= 0.0:
            best = iou(f, start if t <= 0.5 else end)
        total += best
    return total / n


def _pair_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise IoU of two equally shaped ``(..., 4)`` arrays."""
    iw = np.maximum(
        np.minimum(a[..., 0] + a[..., 2] / 2, b[..., 0] + b[..., 2] / 2)
        - np.maximum(a[..., 0] - a[..., 2] / 2, b[..., 0] - b[..., 2] / 2),
        0.0,
    )
    ih = np.maximum(
        np.minimum(a[..., 1] + a[..., 3] / 2, b[..., 1] + b[..., 3] / 2)
        - np.maximum(a[..., 1] - a[..., 3] / 2, b[..., 1] - b[..., 3] / 2),
        0.0,
    )
    inter = iw * ih
    return np.minimum(inter / (a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter), 1.0)


def path_iou_matrix(starts: np.ndarray, ends: np.ndarray, if_boxes: Sequence[np.ndarray]) -> np.ndarray:
    """Vectorized :func:`path_iou` for every (start, end) pair; shape ``(S, E)``."""
    S, E, n = len(starts), len(ends), len(if_boxes)
    if S == 0 or E == 0:
        return np.zeros((S, E))
    st = np.broadcast_to(starts[:, None, :], (S, E, 4))
    en = np.broadcast_to(ends[None, :, :], (S, E, 4))
    total = np.zeros((S, E))
    for i, det_arr in enumerate(if_boxes, start=1):
        t = i / (n + 1)
        f = st + t * (en - st)
        if len(det_arr):
            best = iou_matrix(f.reshape(-1, 4), det_arr).max(axis=1).reshape(S, E)
        else:
            best = np.zeros((S, E))
        fallback = _pair_iou(f, st if t <= 0.5 else en)
        total += np.where(best > 0.0, best, fallback)
    return total / n


# -- shared helpers -----------------------------------------------------------


def _colocated(store: TrackStore, frame: int, box: BBox, thr: float, exclude: int | None = None) -> list[int]:
    """Ids of tracks whose box in ``frame`` overlaps ``box`` with IoU >= ``thr``, best first."""
    hits = []
    for tid, tb in store.at(frame).items():
        if tid != exclude:
            v = iou(box, tb.box)
            if v >= thr:
                hits.append((-v, tid))
    return [tid for _, tid in sorted(hits)]


# -- keyframe -> intermediate frames ---------------------------------------------


def propagate_kf_to_if(
    store: TrackStore,
    segment: tuple[int, int],
    dets_by_frame: Mapping[int, Sequence[Detection]],
    spec: RegionSpec,
    cfg: PropagationConfig,
) -> list[PathCandidate]:
    """Pair start- and end-keyframe boxes by path IoU and fill the frames between.

    Pairs are taken best-first, each end box at most once. A pair is valid when
    its path IoU exceeds the consistency threshold of the ring holding the path
    midpoint. Valid pairs merge the end box into the start box's track; each
    intermediate frame without a matching detection gets the interpolated box.
    Start boxes without a valid pair stay untouched in their tracks.
    """
    s, e = segment
    ifs = list(range(s + 1, e))
    if not ifs:
        return []
    starts = sorted(store.at(s).items())
    ends = sorted(store.at(e).items(), key=lambda kv: (kv[1].det_id if kv[1].det_id is not None else math.inf, kv[0]))
    if not starts or not ends:
        return []
    if_dets = [list(dets_by_frame.get(f, ())) for f in ifs]
    st_arr = boxes_to_array([tb.box for _, tb in starts])
    en_arr = boxes_to_array([tb.box for _, tb in ends])
    scores = path_iou_matrix(st_arr, en_arr, [boxes_to_array([d.box for d in ds]) for ds in if_dets])
    mid = 0.5 * (st_arr[:, None, :] + en_arr[None, :, :])
    mid_r = np.hypot(mid[..., 0] - spec.geometry.center_x, mid[..., 1] - spec.geometry.center_y)
    bounds = np.asarray(spec.boundaries)
    mid_ring = np.minimum(np.searchsorted(bounds, mid_r, side="left"), len(bounds) - 1)
    thr = np.asarray(cfg.consistency_thresholds or spec.iou_thresholds)[mid_ring]

    si, ei = np.nonzero(scores > thr)
    order = sorted(zip((-scores[si, ei]).tolist(), si.tolist(), ei.tolist()))
    used_s, used_e = set(), set()
    out: list[PathCandidate] = []
    for neg, i, j in order:
        if i in used_s or j in used_e:
            continue
        used_s.add(i)
        used_e.add(j)
        a_id, a_tb = starts[i]
        b_id, b_tb = ends[j]
        interp = [interpolate_box(a_tb.box, b_tb.box, (f - s) / (e - s)) for f in ifs]
        out.append(PathCandidate(a_id, b_id, a_tb.box, b_tb.box, interp, -neg, True))
        _apply_valid_path(store, a_id, b_id, a_tb, b_tb, s, e, ifs, interp, if_dets, spec)
    for i, (a_id, a_tb) in enumerate(starts):
        if i not in used_s:
            best = float(scores[i].max())
            out.append(PathCandidate(a_id, -1, a_tb.box, a_tb.box, [], best, False))
    return out


def _apply_valid_path(store, a_id, b_id, a_tb, b_tb, s, e, ifs, interp, if_dets, spec) -> None:
    if a_id not in store.tracks:
        return
    if a_id != b_id:
        a = store.tracks[a_id]
        if e in a.boxes:
            return  # start track already continues elsewhere
        if b_id not in store.tracks:
            return
        after = max(f for f in a.boxes if f < e)
        if not store.move_boxes(b_id, a_id, after):
            return
    conf = 0.5 * (a_tb.confidence + b_tb.confidence)
    a = store.tracks[a_id]
    for f, box, dets in zip(ifs, interp, if_dets):
        if f in a.boxes:
            continue
        thr = spec.threshold_of(box)
        if dets:
            ious = iou_matrix(box.as_array(), boxes_to_array([d.box for d in dets]))[0]
            k = int(np.argmax(ious))
            if ious[k] >= thr:
                owner = store.owner(f, dets[k].det_id)
                if owner is not None and owner != a_id and len(store.tracks[owner].boxes) == 1:
                    store.move_box(owner, a_id, f)
                continue
        if _colocated(store, f, box, thr):
            continue
        store.add(a_id, f, TrackBox(box, Source.INTERPOLATED, conf))


# -- intermediate frames -> keyframes ----------------------------------------------


def propagate_if_to_kf(
    store: TrackStore,
    segment: tuple[int, int],
    dets_by_frame: Mapping[int, Sequence[Detection]],
    spec: RegionSpec,
    cfg: PropagationConfig,
    validator: Validator,
) -> list[tuple[int, int, BBox, bool]]:
    """Extrapolate intermediate-frame detections into keyframes that lack the car.

    Pairs are adjacent detected boxes of one track inside the segment (the
    tracker links them only when their IoU clears the ring threshold), at
    least one of them in an intermediate frame. With a single intermediate
    frame the pair uses the keyframe box on the other side. The extrapolated
    keyframe box is kept only if nothing already sits there and the validator
    accepts it. Returns ``(track, frame, box, accepted)`` per attempt.
    """
    s, e = segment
    ifs = set(range(s + 1, e))
    if not ifs:
        return []
    attempts = []
    tids = sorted(
        {
            tid
            for f in sorted(ifs)
            for tid, tb in store.at(f).items()
            if tb.source is Source.DETECTED
        }
    )
    for tid in tids:
        for kf, direction in ((s, -1), (e, +1)):
            t = store.tracks.get(tid)
            if t is None or kf in t.boxes:
                continue
            inside = sorted(f for f in t.boxes if s <= f <= e)
            pair = inside[:2] if direction < 0 else inside[-2:]
            if len(pair) < 2:
                continue
            fa, fb = pair
            ta, tb_ = t.boxes[fa], t.boxes[fb]
            if fb - fa != 1 or ta.source is not Source.DETECTED or tb_.source is not Source.DETECTED:
                continue
            if not (fa in ifs or fb in ifs):
                continue
            if iou(ta.box, tb_.box) < spec.threshold_of(tb_.box):
                continue
            steps = kf - fa if direction < 0 else kf - fb
            box = extrapolate_box(ta.box, tb_.box, steps)
            if _colocated(store, kf, box, spec.threshold_of(box)):
                continue
            ok = bool(validator(kf, box))
            attempts.append((tid, kf, box, ok))
            if ok:
                conf = 0.5 * (ta.confidence + tb_.confidence)
                store.add(tid, kf, TrackBox(box, Source.EXTRAPOLATED, conf))
    return attempts


# -- high-confidence cars ---------------------------------------------------------


class HccEvent(NamedTuple):
    track_id: int
    direction: str  # "backward" | "forward"
    frame: int
    outcome: str  # "existing" | "accepted" | "failed"


def hcc_pairs(track: Track, plan: SegmentPlan, threshold: float) -> list[tuple[int, int]]:
    out = []
    for s, e in plan.segments_within(track.first, track.last):
        a, b = track.boxes.get(s), track.boxes.get(e)
        if (
            a is not None
            and b is not None
            and a.source is Source.DETECTED
            and b.source is Source.DETECTED
            and a.confidence >= threshold
            and b.confidence >= threshold
        ):
            out.append((s, e))
    return out


def propagate_hcc(
    store: TrackStore,
    plan: SegmentPlan,
    spec: RegionSpec,
    cfg: PropagationConfig,
    validator: Validator,
    trace: list[HccEvent] | None = None,
) -> list[HccEvent]:
    """Extend high-confidence tracks one frame at a time in both directions.

    Each attempt extrapolates from the two boxes at the current end of the
    track. A box co-located with another track counts as an existing car (and,
    with ``hcc_merge_existing``, folds that track in when their frames do not
    overlap); otherwise the validator decides: acceptance adds an ``hcc``
    box, rejection counts a failure. Counters are cumulative per pass; a pass
    ends when either reaches its limit or the sequence boundary is hit.
    """
    events: list[HccEvent] = [] if trace is None else trace
    eligible = []
    for tid in sorted(store.tracks):
        pairs = hcc_pairs(store.tracks[tid], plan, cfg.hcc_threshold)
        if pairs:
            s, e = pairs[0]
            t = store.tracks[tid]
            eligible.append((tid, 0.5 * (t.boxes[s].confidence + t.boxes[e].confidence)))
    for tid, conf in eligible:
        for direction in ("backward", "forward"):
            if tid not in store.tracks:
                break
            _hcc_pass(store, tid, conf, direction, plan.n_frames, spec, cfg, validator, events)
    return events


def _hcc_pass(store, tid, conf, direction, n_frames, spec, cfg, validator, events) -> None:
    existing = failure = 0
    back = direction == "backward"
    t = store.tracks[tid]
    cursor = t.first - 1 if back else t.last + 1
    while 1 <= cursor <= n_frames and existing < cfg.attempt_limit_existing and failure < cfg.attempt_limit_failure:
        frames = t.frames
        if len(frames) < 2:
            return
        fa, fb = (frames[0], frames[1]) if back else (frames[-2], frames[-1])
        steps = cursor - fa if back else cursor - fb
        box = extrapolate_box(t.boxes[fa].box, t.boxes[fb].box, steps, gap=fb - fa)
        hits = _colocated(store, cursor, box, spec.threshold_of(box), exclude=tid)
        if hits:
            existing += 1
            events.append(HccEvent(tid, direction, cursor, "existing"))
            if cfg.hcc_merge_existing and store.merge(hits[0], tid):
                cursor = t.first - 1 if back else t.last + 1
                continue
        elif validator(cursor, box):
            store.add(tid, cursor, TrackBox(box, Source.HCC, conf))
            events.append(HccEvent(tid, direction, cursor, "accepted"))
        else:
            failure += 1
            events.append(HccEvent(tid, direction, cursor, "failed"))
        cursor += -1 if back else 1


# -- stationary filtering -----------------------------------------------------------


def stationary_eps(box: BBox, spec: RegionSpec, cfg: PropagationConfig, scene=SceneClass.BOTH) -> float:
    if cfg.stationary_center_eps is not None:
        return cfg.stationary_center_eps
    lo, hi = spec.limits_for(scene)[classify_region(box, spec)]
    return cfg.stationary_eps_factor * math.sqrt(0.5 * (lo + hi))


def stationary_filter(
    tracks: Sequence[Track],
    plan: SegmentPlan,
    spec: RegionSpec,
    cfg: PropagationConfig,
    scene=SceneClass.BOTH,
) -> tuple[list[Track], list[Track]]:
    """Split tracks into (moving, stationary) from keyframe-pair center motion.

    Only pairs of detected keyframe boxes are examined; added boxes carry
    extrapolation drift. A pair is stationary when its center displacement
    is strictly below the ring's epsilon. A track is stationary only if every keyframe
    pair it owns is; one moving pair makes the whole track moving. Tracks
    without any keyframe pair stay moving.
    """
    moving, stationary = [], []
    for t in tracks:
        n_pairs = n_still = 0
        for s, e in plan.segments_within(t.first, t.last):
            a, b = t.boxes.get(s), t.boxes.get(e)
            if a is None or b is None or a.source is not Source.DETECTED or b.source is not Source.DETECTED:
                continue
            n_pairs += 1
            d = math.hypot(b.box.cx - a.box.cx, b.box.cy - a.box.cy)
            if d < stationary_eps(a.box, spec, cfg, scene):
                n_still += 1
        if n_pairs and n_still == n_pairs:
            t.status = Status.STATIONARY
            stationary.append(t)
        else:
            t.status = Status.MOVING
            moving.append(t)
    return moving, stationary
