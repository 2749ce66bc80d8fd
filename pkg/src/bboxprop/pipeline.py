"""End-to-end post-processing: size filter, segment tracking, propagation, stationary filter."""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .ingest import Detection
from .propagation import (
    ConfigError,
    HccEvent,
    PropagationConfig,
    Validator,
    propagate_hcc,
    propagate_if_to_kf,
    propagate_kf_to_if,
    stationary_filter,
)
from .regions import RegionSpec, SceneClass, size_filter
from .tracker import SegmentPlan, Track, TrackStore, group_by_frame, plan_segments, track_frame


@dataclass
class PipelineResult:
    tracks: list[Track]
    moving: list[Track]
    stationary: list[Track]
    removed: list[Detection]
    plan: SegmentPlan
    hcc_trace: list[HccEvent] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def source_histogram(self) -> dict[str, int]:
        c = Counter(tb.source.value for t in self.tracks for tb in t.boxes.values())
        return {k: c.get(k, 0) for k in ("detected", "interpolated", "extrapolated", "hcc")}


def run_pipeline(
    dets: Sequence[Detection],
    spec: RegionSpec,
    n_frames: int | None = None,
    segment_size: int = 3,
    cfg: PropagationConfig = PropagationConfig(),
    validator: Validator | None = None,
    scene: SceneClass | str = SceneClass.BOTH,
    apply_size_filter: bool = True,
) -> PipelineResult:
    if (cfg.if_to_kf or cfg.hcc) and validator is None:
        raise ConfigError("a validator is required when intermediate-to-keyframe or HCC propagation is enabled")
    if n_frames is None:
        n_frames = max((d.frame for d in dets), default=2)
    n_frames = max(n_frames, 2)
    timings = {}
    t0 = time.perf_counter()
    if apply_size_filter:
        kept, removed = size_filter(dets, spec, scene)
    else:
        kept, removed = list(dets), []
    plan = plan_segments(n_frames, segment_size)
    by_frame = group_by_frame(kept)
    store = TrackStore()
    n_valid = n_invalid = n_ifkf = 0
    for s, e in plan.segments:
        for f in range(s if s == 1 else s + 1, e + 1):
            track_frame(store, f, by_frame.get(f, ()), spec)
        if cfg.kf_to_if:
            paths = propagate_kf_to_if(store, (s, e), by_frame, spec, cfg)
            n_valid += sum(p.valid for p in paths)
            n_invalid += sum(not p.valid for p in paths)
        if cfg.if_to_kf:
            n_ifkf += sum(ok for *_, ok in propagate_if_to_kf(store, (s, e), by_frame, spec, cfg, validator))
    timings["tracking_and_segment_passes"] = time.perf_counter() - t0
    trace: list[HccEvent] = []
    if cfg.hcc:
        t1 = time.perf_counter()
        propagate_hcc(store, plan, spec, cfg, validator, trace)
        timings["hcc"] = time.perf_counter() - t1
    tracks = store.result()
    moving, stationary = stationary_filter(tracks, plan, spec, cfg, scene)
    timings["total"] = time.perf_counter() - t0
    result = PipelineResult(tracks, moving, stationary, removed, plan, trace)
    result.stats = {
        "n_frames": n_frames,
        "segment_size": segment_size,
        "detections_in": len(dets),
        "detections_removed_by_size": len(removed),
        "tracks": len(tracks),
        "moving_tracks": len(moving),
        "stationary_tracks": len(stationary),
        "valid_paths": n_valid,
        "invalid_paths": n_invalid,
        "if_to_kf_boxes": n_ifkf,
        "hcc_attempts": Counter(ev.outcome for ev in trace),
        "box_sources": result.source_histogram(),
        "timings_s": timings,
    }
    result.stats["hcc_attempts"] = dict(sorted(result.stats["hcc_attempts"].items()))
    return result
