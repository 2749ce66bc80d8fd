import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bboxprop.geometry import DEFAULT_GEOMETRY, BBox, radius
from bboxprop.ingest import Detection
from bboxprop.regions import (
    ICIP2020,
    ClusteringError,
    RegionError,
    RegionSpec,
    SceneClass,
    ckmeans_1d,
    classify_region,
    fit_region_spec,
    size_filter,
)

from .oracles import brute_ckmeans


def at_radius(r, side=10.0, phi=0.3):
    return BBox(512 + r * math.cos(phi), 512 + r * math.sin(phi), side, side)


def test_ckmeans_examples():
    one = ckmeans_1d([5, 5, 5], 1)
    assert one.clusters == [[5, 5, 5]] and one.sse == 0.0
    assert ckmeans_1d([1, 2, 11, 12], 2).clusters == [[1, 2], [11, 12]]
    got = ckmeans_1d([1, 2, 3, 10, 11, 12, 20, 21], 3)
    assert got.clusters == [[1, 2, 3], [10, 11, 12], [20, 21]]
    cost, parts = brute_ckmeans([1, 2, 3, 10, 11, 12, 20, 21], 3)
    assert got.clusters == parts and got.sse == pytest.approx(float(cost), abs=1e-12)


def test_ckmeans_infeasible():
    with pytest.raises(ClusteringError):
        ckmeans_1d([1, 1, 2], 3)
    with pytest.raises(ClusteringError):
        ckmeans_1d([], 1)


@given(st.lists(st.integers(0, 40), min_size=2, max_size=10), st.integers(1, 4))
def test_ckmeans_matches_brute_force(values, k):
    if k > len(set(values)):
        return
    cost, _ = brute_ckmeans(values, k)
    assert ckmeans_1d(values, k).sse == pytest.approx(float(cost), rel=1e-9, abs=1e-9)


@given(st.lists(st.floats(0, 600, allow_nan=False), min_size=4, max_size=30))
def test_ckmeans_sse_non_increasing_in_k(values):
    kmax = min(4, len(set(values)))
    sses = [ckmeans_1d(values, k).sse for k in range(1, kmax + 1)]
    assert all(b <= a + 1e-6 * (1 + a) for a, b in zip(sses, sses[1:]))


@given(st.lists(st.floats(0, 600, allow_nan=False), min_size=3, max_size=30), st.integers(1, 3))
def test_ckmeans_clusters_are_contiguous_cover(values, k):
    if k > len(set(values)):
        return
    clusters = ckmeans_1d(values, k).clusters
    assert sorted(v for c in clusters for v in c) == sorted(values)
    assert all(a[-1] < b[0] for a, b in zip(clusters, clusters[1:]))


def test_fit_single_ring_arithmetic():
    side = math.sqrt(140)
    boxes = [(at_radius(100, side, phi), "night") for phi in np.linspace(0, 6, 20)]
    spec = fit_region_spec(boxes, DEFAULT_GEOMETRY, k=1, margin=0.3)
    lo, hi = spec.limits_for("night")[0]
    assert (lo, hi) == (pytest.approx(98.0), pytest.approx(182.0))
    assert spec.boundaries == (512.0,)
    assert spec.limits_for("both") == spec.limits_for("night")


def test_fit_three_clusters_matches_oracle():
    rng = np.random.default_rng(3)
    radii = np.concatenate([rng.normal(c, 12, 4) for c in (90, 250, 400)])
    spec = fit_region_spec([(at_radius(r), "day") for r in radii], k=3)
    _, parts = brute_ckmeans([float(radius(at_radius(r))) for r in radii], 3)
    expect = [(parts[0][-1] + parts[1][0]) / 2, (parts[1][-1] + parts[2][0]) / 2]
    assert spec.boundaries[:2] == pytest.approx(expect, abs=1e-9)
    assert spec.boundaries[2] == 512.0
    assert spec.iou_thresholds == (0.2, 0.3, 0.4)


def test_fit_empty_ring_errors():
    boxes = [(at_radius(100), "both"), (at_radius(110), "both")]
    with pytest.raises(RegionError):
        fit_region_spec(boxes, boundaries=(180, 320, 512))


def test_classify_examples():
    spec = ICIP2020
    assert classify_region(at_radius(100), spec) == 0
    assert classify_region(at_radius(250), spec) == 1
    assert classify_region(BBox(512, 512 - 180, 5, 5), spec) == 0
    assert classify_region(at_radius(400), spec) == 2
    # beyond the last boundary still lands in the outer ring
    assert classify_region(BBox(0, 0, 5, 5), spec) == 2


@given(st.floats(0, 700), st.floats(0, 700))
def test_classify_monotone_in_radius(r1, r2):
    a, b = sorted((r1, r2))
    assert classify_region(at_radius(a), ICIP2020) <= classify_region(at_radius(b), ICIP2020)


def test_size_filter_examples():
    outer = 400
    small = Detection(1, at_radius(outer, 8), 0.9)
    big = Detection(1, at_radius(outer, 10), 0.9)
    kept, removed = size_filter([small, big], ICIP2020, SceneClass.NIGHT)
    assert kept == [small] and removed == [big]
    assert size_filter([], ICIP2020, "night") == ([], [])


@given(st.lists(st.tuples(st.floats(0, 600), st.floats(3, 25)), max_size=30), st.sampled_from(["night", "day", "both"]))
def test_size_filter_partitions_input(items, scene):
    dets = [Detection(1, at_radius(r, s), 0.5, det_id=i) for i, (r, s) in enumerate(items)]
    kept, removed = size_filter(dets, ICIP2020, scene)
    assert sorted(d.det_id for d in kept + removed) == list(range(len(dets)))
    limits = ICIP2020.limits_for(scene)
    for d in kept:
        lo, hi = limits[classify_region(d.box, ICIP2020)]
        assert lo <= d.box.area <= hi


def test_preset_values():
    assert ICIP2020.boundaries == (180.0, 320.0, 512.0)
    assert ICIP2020.iou_thresholds == (0.2, 0.3, 0.4)
    assert ICIP2020.limits_for("night")[2] == (53, 76)
    assert ICIP2020.limits_for("day")[0] == (217, 311)
    assert ICIP2020.limits_for("both")[1] == (133, 191)


def test_spec_json_round_trip(tmp_path):
    path = tmp_path / "r.json"
    ICIP2020.save(path)
    assert RegionSpec.load(path) == ICIP2020


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(boundaries=(320.0, 180.0, 512.0)),
        dict(iou_thresholds=(0.2, 0.3)),
        dict(area_limits={"both": ((10, 5), (1, 2), (1, 2))}),
    ],
)
def test_spec_invariants_enforced(kwargs):
    base = dict(
        boundaries=(180.0, 320.0, 512.0),
        iou_thresholds=(0.2, 0.3, 0.4),
        area_limits={"both": ((1, 2), (1, 2), (1, 2))},
    )
    base.update(kwargs)
    with pytest.raises(RegionError):
        RegionSpec(**base)
