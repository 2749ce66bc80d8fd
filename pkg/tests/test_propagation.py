from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bboxprop.geometry import BBox, boxes_to_array, interpolate_box, iou
from bboxprop.ingest import Detection, GroundTruthBox
from bboxprop.pipeline import run_pipeline
from bboxprop.propagation import (
    ConfigError,
    ConstantValidator,
    OracleValidator,
    PropagationConfig,
    path_iou,
    path_iou_matrix,
    propagate_hcc,
    propagate_if_to_kf,
    propagate_kf_to_if,
    stationary_filter,
)
from bboxprop.regions import ICIP2020, RegionSpec
from bboxprop.sim import NOISE_PRESETS, corrupt_detections, generate_scene, random_scene
from bboxprop.tracker import (
    Source,
    Status,
    Track,
    TrackBox,
    TrackStore,
    group_by_frame,
    plan_segments,
    run_segment_tracking,
    track_frame,
)

# one generous area band so size limits never interfere with these fixtures
LOOSE = RegionSpec(ICIP2020.boundaries, ICIP2020.iou_thresholds, {"both": ((1.0, 1e6),) * 3})
CFG = PropagationConfig()


def det(frame, box, conf=0.9, det_id=0):
    return Detection(frame, box, conf, det_id=det_id)


def tracked_store(dets, frames):
    store = TrackStore()
    by = group_by_frame(dets)
    for f in frames:
        track_frame(store, f, by.get(f, ()), LOOSE)
    return store, by


# -- path IoU ---------------------------------------------------------------------


def test_path_iou_examples():
    a, b = BBox(100, 100, 20, 20), BBox(140, 100, 20, 20)
    ifs = [[interpolate_box(a, b, t)] for t in (0.25, 0.5, 0.75)]
    assert path_iou(a, b, ifs) == 1.0
    # single IF, detection shifted so that IoU = (20 - dx) / (20 + dx) = 0.5
    mid = interpolate_box(a, b, 0.5)
    shifted = BBox(mid.cx + 20 / 3, mid.cy, 20, 20)
    assert path_iou(a, b, [[shifted]]) == pytest.approx(0.5)
    assert path_iou(a, a, [[], [], []]) == 1.0


def test_path_iou_needs_an_intermediate_frame():
    with pytest.raises(ValueError):
        path_iou(BBox(0, 0, 1, 1), BBox(0, 0, 1, 1), [])


box_st = st.builds(BBox, st.floats(0, 300), st.floats(0, 300), st.floats(5, 60), st.floats(5, 60))


@given(box_st, box_st, st.lists(st.lists(box_st, max_size=3), min_size=1, max_size=4))
def test_path_iou_bounds_and_vectorized_agreement(a, b, ifs):
    v = path_iou(a, b, ifs)
    assert 0.0 <= v <= 1.0
    m = path_iou_matrix(boxes_to_array([a]), boxes_to_array([b]), [boxes_to_array(x) for x in ifs])
    assert m[0, 0] == pytest.approx(v, abs=1e-9)


@given(box_st, st.integers(1, 4))
def test_self_path_is_one(a, n):
    assert path_iou(a, a, [[a]] * n) == pytest.approx(1.0)


# -- keyframe -> intermediate frames --------------------------------------------------


def mixed_visibility_scene():
    """Segment 1..5. Cars 1 and 3 are invisible in the IFs, car 2 is seen everywhere,
    car 6 leaves after KF1 and an unrelated car 4 enters at KF5."""
    dets = []
    car1 = BBox(300, 300, 40, 40)  # parked
    for f in (1, 5):
        dets.append(det(f, car1, det_id=0))
        dets.append(det(f, BBox(600 + 4 * (f - 1), 700, 40, 40), det_id=2))  # car 3, slow
    for f in range(1, 6):
        dets.append(det(f, BBox(400 + 10 * (f - 1), 500, 40, 40), det_id=1))  # car 2
    dets.append(det(1, BBox(150, 800, 40, 40), det_id=3))  # car 6
    dets.append(det(5, BBox(850, 250, 40, 40), det_id=3))  # car 4
    return dets


def test_kf_to_if_three_valid_pairs_and_retained_invalid():
    store, by = tracked_store(mixed_visibility_scene(), range(1, 6))
    start_ids = set(store.at(1))
    paths = propagate_kf_to_if(store, (1, 5), by, LOOSE, CFG)
    valid = [p for p in paths if p.valid]
    invalid = [p for p in paths if not p.valid]
    assert len(valid) == 3 and len(invalid) == 1
    assert invalid[0].start_box == BBox(150, 800, 40, 40)
    # the invalid start box stays on its own track; nothing was deleted
    assert invalid[0].start_track in store.tracks and invalid[0].start_track in start_ids
    full = [t for t in store.result() if t.frames == [1, 2, 3, 4, 5]]
    assert len(full) == 3
    parked = next(t for t in full if t.boxes[1].box == BBox(300, 300, 40, 40))
    assert [parked.boxes[f].source for f in (2, 3, 4)] == [Source.INTERPOLATED] * 3
    assert parked.boxes[3].box == BBox(300, 300, 40, 40)


def test_kf_to_if_fixpoint_on_clean_car():
    dets = [det(f, BBox(200 + 5 * f, 300, 40, 40)) for f in range(1, 6)]
    store, by = tracked_store(dets, range(1, 6))
    before = {t.id: dict(t.boxes) for t in store.result()}
    propagate_kf_to_if(store, (1, 5), by, LOOSE, CFG)
    assert {t.id: dict(t.boxes) for t in store.result()} == before


# -- intermediate frames -> keyframes --------------------------------------------------


def if_only_dets():
    return [det(f, BBox(300 + 6 * f, 400, 40, 40)) for f in (2, 3, 4)]


def if_only_gt():
    return [GroundTruthBox(f, 1, BBox(300 + 6 * f, 400, 40, 40)) for f in range(1, 6)]


def test_if_to_kf_fills_both_keyframes():
    store, by = tracked_store(if_only_dets(), range(1, 6))
    attempts = propagate_if_to_kf(store, (1, 5), by, LOOSE, CFG, OracleValidator(if_only_gt()))
    assert sorted((f, ok) for _, f, _, ok in attempts) == [(1, True), (5, True)]
    (t,) = store.result()
    assert t.frames == [1, 2, 3, 4, 5]
    assert t.boxes[1].source is Source.EXTRAPOLATED and t.boxes[1].box == BBox(306, 400, 40, 40)
    assert t.boxes[5].box == BBox(330, 400, 40, 40)


def test_if_to_kf_rejecting_validator_adds_nothing():
    store, by = tracked_store(if_only_dets(), range(1, 6))
    v = ConstantValidator(False)
    attempts = propagate_if_to_kf(store, (1, 5), by, LOOSE, CFG, v)
    assert v.calls == 2 and not any(ok for *_, ok in attempts)
    assert store.result()[0].frames == [2, 3, 4]


def test_if_to_kf_low_overlap_pair_not_extrapolated():
    # consecutive IF boxes with IoU ~0.1: the tracker does not link them, so no pair exists
    a, b = BBox(300, 300, 40, 40), BBox(332.7, 300, 40, 40)
    assert iou(a, b) == pytest.approx(0.1, abs=0.01)
    store, by = tracked_store([det(2, a), det(3, b)], range(1, 5))
    v = ConstantValidator(True)
    assert propagate_if_to_kf(store, (1, 4), by, LOOSE, CFG, v) == []
    assert v.calls == 0


# -- high-confidence cars --------------------------------------------------------------


def hcc_fixture(first_gt=94, last_gt=101, n=120):
    # KFs every 4 frames (segment size 5): 97 and 101 are keyframes
    plan = plan_segments(n, 5)
    box = lambda f: BBox(200 + 6 * f, 400, 40, 40)  # noqa: E731
    store = TrackStore()
    tid = store.new_track()
    for f in range(97, 102):
        store.add(tid, f, TrackBox(box(f), Source.DETECTED, 0.9, 0))
    gt = [GroundTruthBox(f, 1, box(f)) for f in range(first_gt, last_gt + 1)]
    return plan, store, tid, gt


def test_hcc_backward_extension_to_true_start():
    plan, store, tid, gt = hcc_fixture()
    trace = propagate_hcc(store, plan, LOOSE, CFG, OracleValidator(gt))
    back = [(e.frame, e.outcome) for e in trace if e.direction == "backward"]
    assert back == [(96, "accepted"), (95, "accepted"), (94, "accepted"), (93, "failed"), (92, "failed"), (91, "failed")]
    fwd = [(e.frame, e.outcome) for e in trace if e.direction == "forward"]
    assert fwd == [(102, "failed"), (103, "failed"), (104, "failed")]
    assert store.tracks[tid].first == 94
    assert all(store.tracks[tid].boxes[f].source is Source.HCC for f in (94, 95, 96))


def test_hcc_backward_pass_noop_at_sequence_start():
    plan = plan_segments(20, 5)
    store = TrackStore()
    tid = store.new_track()
    for f in range(1, 6):
        store.add(tid, f, TrackBox(BBox(200 + 6 * f, 400, 40, 40), Source.DETECTED, 0.9, 0))
    trace = propagate_hcc(store, plan, LOOSE, CFG, ConstantValidator(False))
    assert not [e for e in trace if e.direction == "backward"]


@pytest.mark.parametrize("limit", [1, 2, 3, 4, 5])
def test_hcc_always_fail_stops_at_limit(limit):
    plan, store, tid, _ = hcc_fixture()
    v = ConstantValidator(False)
    cfg = replace(CFG, attempt_limit_failure=limit)
    trace = propagate_hcc(store, plan, LOOSE, cfg, v)
    assert v.calls == 2 * limit
    assert store.tracks[tid].frames == list(range(97, 102))
    for d in ("backward", "forward"):
        assert [e.outcome for e in trace if e.direction == d] == ["failed"] * limit


def test_hcc_low_confidence_track_not_eligible():
    plan, store, tid, gt = hcc_fixture()
    for f, tb in store.tracks[tid].boxes.items():
        store.tracks[tid].boxes[f] = TrackBox(tb.box, tb.source, 0.7, tb.det_id)
    assert propagate_hcc(store, plan, LOOSE, CFG, OracleValidator(gt)) == []


def test_hcc_existing_counter_stops_pass():
    plan, store, tid, gt = hcc_fixture()
    other = store.new_track()
    for f in (94, 95, 96):
        store.add(other, f, TrackBox(BBox(200 + 6 * f, 400, 40, 40), Source.DETECTED, 0.5, 1))
    for f in (90, 91, 92, 93):  # a second, overlapping fragment keeps the counter going
        store.add(store.new_track(), f, TrackBox(BBox(200 + 6 * f, 400, 40, 40), Source.DETECTED, 0.5, 1))
    cfg = replace(CFG, hcc_merge_existing=False)
    trace = propagate_hcc(store, plan, LOOSE, cfg, ConstantValidator(True))
    back = [(e.frame, e.outcome) for e in trace if e.direction == "backward"]
    assert back == [(96, "existing"), (95, "existing"), (94, "existing")]


def test_hcc_merges_colocated_fragment():
    plan, store, tid, gt = hcc_fixture()
    other = store.new_track()
    for f in (92, 93, 94, 95, 96):
        store.add(other, f, TrackBox(BBox(200 + 6 * f, 400, 40, 40), Source.DETECTED, 0.5, 1))
    propagate_hcc(store, plan, LOOSE, CFG, ConstantValidator(False))
    assert other not in store.tracks
    assert store.tracks[tid].frames[:6] == [92, 93, 94, 95, 96, 97]


# -- stationary filter -------------------------------------------------------------------


def track_of(centers, first=1):
    return Track(1, {first + i: TrackBox(BBox(x, y, 40, 40), Source.DETECTED, 0.9) for i, (x, y) in enumerate(centers)})


def test_stationary_examples():
    plan = plan_segments(300, 3)
    # eps scales with the ring's typical box size; the preset bands give ~1.4 px here
    moving, still = stationary_filter([track_of([(300, 300)] * 300)], plan, ICIP2020, CFG)
    assert not moving and still[0].status is Status.STATIONARY
    parked_then_moving = [(300, 300)] * 100 + [(300 + 3 * k, 300) for k in range(1, 101)]
    moving, still = stationary_filter([track_of(parked_then_moving)], plan, ICIP2020, CFG)
    assert len(moving) == 1 and not still and moving[0].status is Status.MOVING


def test_stationary_tie_is_moving():
    plan = plan_segments(5, 3)
    cfg = replace(CFG, stationary_center_eps=2.0)
    on_eps = [(300, 300), (301, 300), (302, 300), (303, 300), (304, 300)]
    moving, _ = stationary_filter([track_of(on_eps)], plan, LOOSE, cfg)
    assert len(moving) == 1
    below = [(300, 300), (300.9, 300), (301.9, 300), (302.9, 300), (303.8, 300)]
    _, still = stationary_filter([track_of(below)], plan, LOOSE, cfg)
    assert len(still) == 1


def test_track_without_keyframe_pair_stays_moving():
    plan = plan_segments(9, 5)
    moving, _ = stationary_filter([track_of([(300, 300)] * 3, first=2)], plan, LOOSE, CFG)
    assert len(moving) == 1


# -- validators and config ---------------------------------------------------------------


def test_oracle_validator():
    gt = [GroundTruthBox(1, 1, BBox(100, 100, 40, 40))]
    v = OracleValidator(gt)
    assert v(1, BBox(100, 100, 40, 40))
    assert not v(1, BBox(700, 700, 40, 40))
    assert not v(2, BBox(100, 100, 40, 40))


def test_oracle_flip_rate():
    gt = [GroundTruthBox(1, 1, BBox(100, 100, 40, 40))]
    v = OracleValidator(gt, flip_prob=0.01, seed=5)
    wrong = sum(not v(1, BBox(100, 100, 40, 40)) for _ in range(20000))
    assert 0.007 < wrong / 20000 < 0.013


@pytest.mark.parametrize(
    "kwargs",
    [dict(hcc_threshold=1.0), dict(attempt_limit_failure=0), dict(consistency_thresholds=(0.2, 1.2, 0.3))],
)
def test_config_invariants(kwargs):
    with pytest.raises(ConfigError):
        PropagationConfig(**kwargs)


def test_config_dict_round_trip():
    cfg = PropagationConfig(consistency_thresholds=(0.25, 0.3, 0.35), hcc=False)
    assert PropagationConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        PropagationConfig.from_dict({"hcc_treshold": 0.7})


def test_pipeline_needs_validator_up_front():
    with pytest.raises(ConfigError):
        run_pipeline([], ICIP2020, 10, cfg=PropagationConfig())
    run_pipeline([], ICIP2020, 10, cfg=PropagationConfig(if_to_kf=False, hcc=False))


# -- pipeline-level invariants on small noisy scenes ---------------------------------------


def small_case(seed):
    scene = random_scene(6, 80, seed, n_parked=1)
    gt = generate_scene(scene)
    plan = plan_segments(80, 3)
    dets = corrupt_detections(gt, replace(NOISE_PRESETS["night"], seed=seed), plan)
    return gt, dets


def detected_set(tracks):
    return sorted((f, tb.det_id) for t in tracks for f, tb in t.boxes.items() if tb.source is Source.DETECTED)


@settings(max_examples=12)
@given(st.integers(0, 10_000), st.booleans(), st.booleans(), st.booleans())
def test_propagation_only_adds_boxes(seed, kf_if, if_kf, hcc):
    gt, dets = small_case(seed)
    cfg = PropagationConfig(kf_to_if=kf_if, if_to_kf=if_kf, hcc=hcc)
    base = run_pipeline(dets, LOOSE, 80, 3, PropagationConfig(kf_to_if=False, if_to_kf=False, hcc=False))
    res = run_pipeline(dets, LOOSE, 80, 3, cfg, OracleValidator(gt, flip_prob=0.01, seed=seed))
    # detected boxes are neither lost nor duplicated
    assert detected_set(res.tracks) == detected_set(base.tracks)
    frames_ids = [(f, t.id) for t in res.tracks for f in t.boxes]
    assert len(frames_ids) == len(set(frames_ids))
    added = [tb for t in res.tracks for tb in t.boxes.values() if tb.source is not Source.DETECTED]
    assert len(added) == sum(len(t.boxes) for t in res.tracks) - len(detected_set(base.tracks))
    counts = {}
    for e in res.hcc_trace:
        key = (e.track_id, e.direction)
        c = counts.setdefault(key, {"existing": 0, "failed": 0})
        if e.outcome in c:
            c[e.outcome] += 1
    for c in counts.values():
        assert c["existing"] <= cfg.attempt_limit_existing and c["failed"] <= cfg.attempt_limit_failure


@settings(max_examples=8)
@given(st.integers(0, 10_000))
def test_toggles_off_equals_segment_tracking(seed):
    _, dets = small_case(seed)
    off = PropagationConfig(kf_to_if=False, if_to_kf=False, hcc=False)
    res = run_pipeline(dets, LOOSE, 80, 3, off)
    ref = run_segment_tracking(group_by_frame(dets), plan_segments(80, 3), LOOSE)
    assert [(t.id, t.boxes) for t in res.tracks] == [(t.id, t.boxes) for t in ref]
