"""Concentric ring partition of the fisheye image.

Rings come from optimal 1-D k-means on box-center radii. Each ring carries
an association IoU threshold and a per-scene-class area band used to drop
implausibly sized detections.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .geometry import DEFAULT_GEOMETRY, BBox, ImageGeometry, radius


class SceneClass(str, enum.Enum):
    NIGHT = "night"
    DAY = "day"
    BOTH = "both"


class ClusteringError(ValueError):
    pass


class RegionError(ValueError):
    pass


class Clustering(NamedTuple):
    clusters: list[list[float]]
    sse: float


def _cluster_sse(values: np.ndarray) -> float:
    return float(((values - values.mean()) ** 2).sum()) if len(values) else 0.0


def ckmeans_1d(values: Sequence[float], k: int) -> Clustering:
    """Optimal contiguous k-means partition of 1-D data by dynamic programming.

    Equal values are collapsed into weighted points so the DP runs over
    distinct values only; a cluster therefore never splits a run of ties.
    """
    x = np.sort(np.asarray(values, dtype=float))
    if len(x) == 0:
        raise ClusteringError("cannot cluster an empty sample")
    uniq, counts = np.unique(x, return_counts=True)
    n = len(uniq)
    if not 1 <= k <= n:
        raise ClusteringError(f"k={k} infeasible for {n} distinct values")

    w = counts.astype(float)
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cs = np.concatenate([[0.0], np.cumsum(w * uniq)])
    cs2 = np.concatenate([[0.0], np.cumsum(w * uniq * uniq)])

    def cost(i: np.ndarray, j: int) -> np.ndarray:
        # SSE of distinct points i..j (inclusive, 0-based), vectorized over i
        ww = cw[j + 1] - cw[i]
        s = cs[j + 1] - cs[i]
        s2 = cs2[j + 1] - cs2[i]
        return np.maximum(s2 - s * s / ww, 0.0)

    inf = np.inf
    dp = np.full((k, n), inf)
    back = np.zeros((k, n), dtype=int)
    dp[0] = np.maximum(cs2[1:] - cs[1:] ** 2 / cw[1:], 0.0)
    for m in range(1, k):
        for j in range(m, n):
            i = np.arange(m, j + 1)
            cand = dp[m - 1, i - 1] + cost(i, j)
            best = int(np.argmin(cand))
            dp[m, j] = cand[best]
            back[m, j] = i[best]

    bounds = []
    j = n - 1
    for m in range(k - 1, -1, -1):
        i = back[m, j] if m > 0 else 0
        bounds.append((i, j))
        j = i - 1
    bounds.reverse()

    clusters = []
    for i, j in bounds:
        lo, hi = uniq[i], uniq[j]
        clusters.append([float(v) for v in x[(x >= lo) & (x <= hi)]])
    sse = sum(_cluster_sse(np.asarray(c)) for c in clusters)
    return Clustering(clusters, sse)


@dataclass(frozen=True)
class RegionSpec:
    boundaries: tuple[float, ...]
    iou_thresholds: tuple[float, ...]
    area_limits: dict[str, tuple[tuple[float, float], ...]]
    geometry: ImageGeometry = field(default=DEFAULT_GEOMETRY)

    def __post_init__(self) -> None:
        b = list(self.boundaries)
        if not b or any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise RegionError(f"ring boundaries must be strictly ascending: {b}")
        if len(self.iou_thresholds) != len(b):
            raise RegionError("need one IoU threshold per ring")
        if any(not 0.0 < t < 1.0 for t in self.iou_thresholds):
            raise RegionError("IoU thresholds must lie in (0, 1)")
        for scene, limits in self.area_limits.items():
            if len(limits) != len(b):
                raise RegionError(f"scene {scene!r}: need one area band per ring")
            for lo, hi in limits:
                if not 0 < lo < hi:
                    raise RegionError(f"scene {scene!r}: bad area band ({lo}, {hi})")

    @property
    def n_rings(self) -> int:
        return len(self.boundaries)

    def limits_for(self, scene: SceneClass | str) -> tuple[tuple[float, float], ...]:
        key = SceneClass(scene).value
        if key in self.area_limits:
            return self.area_limits[key]
        if SceneClass.BOTH.value in self.area_limits:
            return self.area_limits[SceneClass.BOTH.value]
        raise RegionError(f"no area limits fitted for scene class {key!r}")

    def ring_of(self, b: BBox) -> int:
        return classify_region(b, self)

    def threshold_of(self, b: BBox) -> float:
        return self.iou_thresholds[classify_region(b, self)]

    def to_dict(self) -> dict:
        return {
            "boundaries": list(self.boundaries),
            "iou_thresholds": list(self.iou_thresholds),
            "area_limits": {k: [list(p) for p in v] for k, v in self.area_limits.items()},
            "geometry": self.geometry.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegionSpec":
        return cls(
            boundaries=tuple(float(v) for v in d["boundaries"]),
            iou_thresholds=tuple(float(v) for v in d["iou_thresholds"]),
            area_limits={
                k: tuple((float(lo), float(hi)) for lo, hi in v) for k, v in d["area_limits"].items()
            },
            geometry=ImageGeometry.from_dict(d["geometry"]) if "geometry" in d else DEFAULT_GEOMETRY,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RegionSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


DEFAULT_BOUNDARIES = (180.0, 320.0, 512.0)
DEFAULT_THRESHOLDS = (0.2, 0.3, 0.4)

# Published per-ring area bands (px^2), inner/middle/outer.
ICIP2020 = RegionSpec(
    boundaries=DEFAULT_BOUNDARIES,
    iou_thresholds=DEFAULT_THRESHOLDS,
    area_limits={
        "night": ((113.0, 162.0), (92.0, 132.0), (53.0, 76.0)),
        "day": ((217.0, 311.0), (166.0, 238.0), (94.0, 135.0)),
        "both": ((211.0, 302.0), (133.0, 191.0), (88.0, 127.0)),
    },
)

PRESETS = {"icip2020": ICIP2020}


def classify_region(b: BBox, spec: RegionSpec, g: ImageGeometry | None = None) -> int:
    r = radius(b, g or spec.geometry)
    for i, bound in enumerate(spec.boundaries):
        if r <= bound:
            return i
    return spec.n_rings - 1


def default_thresholds(k: int) -> tuple[float, ...]:
    if k == len(DEFAULT_THRESHOLDS):
        return DEFAULT_THRESHOLDS
    if k == 1:
        return (0.3,)
    return tuple(float(v) for v in np.round(np.linspace(0.2, 0.4, k), 6))


def fit_region_spec(
    boxes: Iterable[tuple[BBox, SceneClass | str]],
    g: ImageGeometry = DEFAULT_GEOMETRY,
    k: int = 3,
    margin: float = 0.3,
    boundaries: Sequence[float] | None = None,
    iou_thresholds: Sequence[float] | None = None,
) -> RegionSpec:
    """Fit ring boundaries and per-ring area bands from ground-truth boxes.

    With ``boundaries`` given, only the area bands are fitted. Bands are
    ``(1 - margin) * mean`` to ``(1 + margin) * mean`` of box area per ring,
    computed per scene class and for all classes pooled under ``"both"``.
    """
    items = [(b, SceneClass(s)) for b, s in boxes]
    if not items:
        raise RegionError("no ground-truth boxes to fit from")
    if k < 1:
        raise RegionError("need at least one ring")
    if not 0.0 < margin < 1.0:
        raise RegionError("margin must lie in (0, 1)")

    radii = np.array([radius(b, g) for b, _ in items])
    if boundaries is None:
        clusters = ckmeans_1d(radii, k).clusters
        bounds = [(clusters[i][-1] + clusters[i + 1][0]) / 2.0 for i in range(k - 1)]
        bounds.append(max(g.max_radius, float(radii.max())))
    else:
        bounds = [float(v) for v in boundaries]
        if len(bounds) != k:
            raise RegionError("boundary count must equal k")
        bounds[-1] = max(bounds[-1], float(radii.max()))
    thresholds = tuple(iou_thresholds) if iou_thresholds is not None else default_thresholds(k)

    probe = RegionSpec(tuple(bounds), thresholds, {}, g)
    rings = np.array([classify_region(b, probe) for b, _ in items])
    areas = np.array([b.area for b, _ in items])
    scenes = np.array([s.value for _, s in items])

    limits: dict[str, tuple[tuple[float, float], ...]] = {}
    groups = sorted({s.value for _, s in items} - {SceneClass.BOTH.value})
    for scene in groups + [SceneClass.BOTH.value]:
        sel = np.ones(len(items), bool) if scene == SceneClass.BOTH.value else scenes == scene
        bands = []
        for ring in range(k):
            a = areas[sel & (rings == ring)]
            if len(a) == 0:
                raise RegionError(f"ring {ring} has no boxes for scene class {scene!r}")
            mean = float(a.mean())
            bands.append(((1.0 - margin) * mean, (1.0 + margin) * mean))
        limits[scene] = tuple(bands)
    return RegionSpec(tuple(bounds), thresholds, limits, g)


def size_filter(dets: Sequence, spec: RegionSpec, scene: SceneClass | str = SceneClass.BOTH):
    """Split detections into (kept, removed) by the area band of each one's ring."""
    limits = spec.limits_for(scene)
    kept, removed = [], []
    for d in dets:
        lo, hi = limits[classify_region(d.box, spec)]
        (kept if lo <= d.box.area <= hi else removed).append(d)
    return kept, removed
