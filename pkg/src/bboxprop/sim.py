"""Synthetic fisheye intersection scenes with ground truth and detector noise.

Camera model: equidistant fisheye looking straight down from ``camera_height``
metres. A ground point at distance D from the nadir maps to image radius
``r = focal * atan(D / camera_height)`` with its azimuth unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import DEFAULT_GEOMETRY, BBox, ImageGeometry, iou
from .ingest import Detection, GroundTruthBox, Modality
from .tracker import SegmentPlan


@dataclass(frozen=True)
class Route:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def length(self) -> float:
        return math.hypot(self.x1 - self.x0, self.y1 - self.y0)

    def point(self, s: float) -> tuple[float, float]:
        L = self.length
        return (self.x0 + (self.x1 - self.x0) * s / L, self.y0 + (self.y1 - self.y0) * s / L)


@dataclass(frozen=True)
class CarSpec:
    route: int
    speed: float  # m/s along the route
    spawn_frame: int = 1
    dwell: tuple[tuple[int, int], ...] = ()  # inclusive frame ranges with the car held still
    footprint: float = 1.5  # metres; apparent box side at the nadir is footprint * focal / height
    start_offset: float = 0.0  # metres along the route at spawn


@dataclass
class SceneSpec:
    routes: list[Route]
    cars: list[CarSpec]
    n_frames: int
    geometry: ImageGeometry = DEFAULT_GEOMETRY
    camera_height: float = 8.0
    focal: float | None = None  # px per radian; default puts the horizon on the image circle
    fps: float = 15.0
    size_exponent: float = 0.25

    def __post_init__(self) -> None:
        if self.focal is None:
            self.focal = self.geometry.max_radius / (math.pi / 2)
        for c in self.cars:
            if c.speed < 0:
                raise ValueError("car speeds must be non-negative")
            if not 0 <= c.route < len(self.routes):
                raise ValueError(f"car refers to unknown route {c.route}")
            for a, b in c.dwell:
                if a > b or a < c.spawn_frame:
                    raise ValueError(f"dwell interval ({a}, {b}) outside the car's lifetime")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometry"] = self.geometry.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["routes"] = [Route(**r) for r in d["routes"]]
        d["cars"] = [
            CarSpec(**{**c, "dwell": tuple(tuple(x) for x in c.get("dwell", ()))}) for c in d["cars"]
        ]
        if "geometry" in d:
            d["geometry"] = ImageGeometry.from_dict(d["geometry"])
        return cls(**d)


def _jacobian_scale(D: float, spec: SceneSpec) -> float:
    """Geometric mean of radial and tangential image scale (px per metre) at ground distance D."""
    h, f = spec.camera_height, spec.focal
    radial = f * h / (h * h + D * D)
    tangential = f / h if D < 1e-9 else f * math.atan(D / h) / D
    return math.sqrt(radial * tangential)


def project_fisheye(x: float, y: float, spec: SceneSpec, footprint: float = 1.5) -> tuple[float, float, float]:
    """Ground point (metres) -> image point (px) and apparent box side (px).

    The side shrinks with the local projection scale, damped by
    ``size_exponent`` (1 = full scale change, 0 = constant size).
    """
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError("ground point must be finite")
    D = math.hypot(x, y)
    theta = math.atan2(D, spec.camera_height)
    r = spec.focal * theta
    if r > spec.geometry.max_radius:
        raise ValueError(f"ground point at {D:.1f} m projects outside the image circle")
    phi = math.atan2(y, x)
    g = spec.geometry
    u = g.center_x + r * math.cos(phi)
    v = g.center_y + r * math.sin(phi)
    j0 = _jacobian_scale(0.0, spec)
    side = footprint * j0 * (_jacobian_scale(D, spec) / j0) ** spec.size_exponent
    return u, v, side


def car_trajectory(car: CarSpec, spec: SceneSpec) -> dict[int, tuple[float, float]]:
    """Frame -> ground position while the car is on its route."""
    route = spec.routes[car.route]
    step = car.speed / spec.fps
    held = set()
    for a, b in car.dwell:
        held.update(range(a, b + 1))
    out = {}
    s = car.start_offset
    for f in range(car.spawn_frame, spec.n_frames + 1):
        if f > car.spawn_frame and f not in held:
            s += step
        if s > route.length + 1e-9:
            break
        out[f] = route.point(s)
    return out


def _car_boxes(car: CarSpec, spec: SceneSpec) -> dict[int, BBox]:
    boxes = {}
    for f, (x, y) in car_trajectory(car, spec).items():
        u, v, side = project_fisheye(x, y, spec, car.footprint)
        boxes[f] = BBox(u, v, side, side)
    return boxes


def generate_scene(spec: SceneSpec) -> list[GroundTruthBox]:
    """Ground-truth boxes of every car in every frame it is on screen.

    ``moving`` is False only for cars whose position never changes in the
    sequence.
    """
    out = []
    for car_id, car in enumerate(spec.cars, start=1):
        boxes = _car_boxes(car, spec)
        if not boxes:
            continue
        centers = {(round(b.cx, 9), round(b.cy, 9)) for b in boxes.values()}
        moving = len(centers) > 1
        out.extend(GroundTruthBox(f, car_id, b, moving) for f, b in boxes.items())
    out.sort(key=lambda g: (g.frame, g.car_id))
    return out


# -- detection noise --------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    kf_miss: tuple[float, ...] = (0.0, 0.0, 0.0)  # per ring, full-modality frames
    if_miss: tuple[float, ...] = (0.0, 0.0, 0.0)  # per ring, motion-only frames
    fp_rate: tuple[float, ...] = (0.0, 0.0, 0.0)  # expected false positives per frame per ring
    center_jitter: float = 0.0  # px
    size_jitter: float = 0.0  # fraction of side
    tp_conf: tuple[float, float] = (0.85, 0.0)  # mean, sigma
    fp_conf: tuple[float, float] = (0.4, 0.0)
    fp_size_range: tuple[float, float] = (0.6, 1.6)  # multiples of the ring's mean car side
    ring_boundaries: tuple[float, ...] = (180.0, 320.0, 512.0)
    seed: int = 0

    def __post_init__(self) -> None:
        n = len(self.ring_boundaries)
        for name in ("kf_miss", "if_miss", "fp_rate"):
            v = getattr(self, name)
            if len(v) != n:
                raise ValueError(f"{name} needs one value per ring")
        for p in (*self.kf_miss, *self.if_miss):
            if not 0.0 <= p <= 1.0:
                raise ValueError("miss probabilities must lie in [0, 1]")
        if any(r < 0 for r in self.fp_rate):
            raise ValueError("false-positive rates must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


NOISE_PRESETS = {
    "clean": NoiseSpec(),
    "night": NoiseSpec(
        kf_miss=(0.05, 0.08, 0.45),
        if_miss=(0.08, 0.10, 0.45),
        fp_rate=(0.05, 0.10, 0.30),
        center_jitter=0.2,
        size_jitter=0.02,
        tp_conf=(0.85, 0.10),
        fp_conf=(0.40, 0.15),
    ),
    "day": NoiseSpec(
        kf_miss=(0.03, 0.05, 0.25),
        if_miss=(0.05, 0.06, 0.25),
        fp_rate=(0.03, 0.06, 0.20),
        center_jitter=0.2,
        size_jitter=0.02,
        tp_conf=(0.85, 0.10),
        fp_conf=(0.40, 0.15),
    ),
}


def _ring(r: float, bounds: Sequence[float]) -> int:
    for i, b in enumerate(bounds):
        if r <= b:
            return i
    return len(bounds) - 1


def _still_frames(gt: Sequence[GroundTruthBox]) -> set[tuple[int, int]]:
    """(frame, car) pairs where the car sits where it was one frame earlier (or later, for its first frame)."""
    by_car: dict[int, dict[int, BBox]] = {}
    for g in gt:
        by_car.setdefault(g.car_id, {})[g.frame] = g.box
    still = set()
    for cid, boxes in by_car.items():
        for f, b in boxes.items():
            ref = boxes.get(f - 1, boxes.get(f + 1))
            if ref is not None and ref.cx == b.cx and ref.cy == b.cy:
                still.add((f, cid))
    return still


def _clip01(v: float) -> float:
    return min(1.0, max(0.0, v))


def corrupt_detections(
    gt: Sequence[GroundTruthBox],
    noise: NoiseSpec,
    plan: SegmentPlan | None = None,
    geometry: ImageGeometry = DEFAULT_GEOMETRY,
    n_frames: int | None = None,
) -> list[Detection]:
    """Turn ground truth into detector output.

    Keyframes of ``plan`` use full modality, other frames motion-only; with no
    plan every frame is full modality. On motion-only frames a car that has not
    moved since the previous frame is always missed. Each frame draws from its
    own generator seeded by ``(seed, frame)``, so presets that differ only in
    probabilities see the same underlying draws.
    """
    bounds = noise.ring_boundaries
    if n_frames is None:
        n_frames = plan.n_frames if plan is not None else max((g.frame for g in gt), default=0)
    still = _still_frames(gt)
    gt_by: dict[int, list[GroundTruthBox]] = {}
    ring_sides: dict[int, list[float]] = {}
    for g in gt:
        gt_by.setdefault(g.frame, []).append(g)
        r = math.hypot(g.box.cx - geometry.center_x, g.box.cy - geometry.center_y)
        ring_sides.setdefault(_ring(r, bounds), []).append(math.sqrt(g.box.area))
    all_sides = [s for v in ring_sides.values() for s in v]
    fallback_side = float(np.mean(all_sides)) if all_sides else 20.0
    mean_side = {k: float(np.mean(v)) for k, v in ring_sides.items()}

    out: list[Detection] = []
    for frame in range(1, n_frames + 1):
        rng = np.random.default_rng([noise.seed, frame])
        full = plan is None or plan.is_keyframe(frame)
        modality = Modality.FULL if full else Modality.MOTION
        found: list[tuple[BBox, float]] = []
        for g in sorted(gt_by.get(frame, []), key=lambda g: g.car_id):
            u = rng.random()
            z = rng.standard_normal(5)
            r = math.hypot(g.box.cx - geometry.center_x, g.box.cy - geometry.center_y)
            ring = _ring(r, bounds)
            if not full and (frame, g.car_id) in still:
                continue
            if u < (noise.kf_miss if full else noise.if_miss)[ring]:
                continue
            b = g.box
            box = BBox(
                b.cx + noise.center_jitter * z[0],
                b.cy + noise.center_jitter * z[1],
                max(1.0, b.w * (1.0 + noise.size_jitter * z[2])),
                max(1.0, b.h * (1.0 + noise.size_jitter * z[3])),
            )
            found.append((box, _clip01(noise.tp_conf[0] + noise.tp_conf[1] * z[4])))
        for ring, rate in enumerate(noise.fp_rate):
            if rate <= 0:
                continue
            inner = bounds[ring - 1] if ring > 0 else 0.0
            outer = min(bounds[ring], geometry.max_radius)
            if outer <= inner:
                continue
            for _ in range(int(rng.poisson(rate))):
                rr = math.sqrt(rng.uniform(inner * inner, outer * outer))
                phi = rng.uniform(0.0, 2.0 * math.pi)
                side = mean_side.get(ring, fallback_side) * rng.uniform(*noise.fp_size_range)
                aspect = rng.uniform(0.8, 1.25)
                conf = _clip01(noise.fp_conf[0] + noise.fp_conf[1] * rng.standard_normal())
                box = BBox(
                    geometry.center_x + rr * math.cos(phi),
                    geometry.center_y + rr * math.sin(phi),
                    side * math.sqrt(aspect),
                    side / math.sqrt(aspect),
                )
                found.append((box, conf))
        order = rng.permutation(len(found)) if len(found) > 1 else range(len(found))
        for det_id, k in enumerate(order):
            box, conf = found[int(k)]
            out.append(Detection(frame, box, conf, modality, det_id))
    return out


# -- scene builders ----------------------------------------------------------------


def intersection_routes(reach: float = 22.0, lanes: Sequence[float] = (1.75, 5.25)) -> list[Route]:
    """Straight lanes through a four-way crossing centred under the camera."""
    routes = []
    for off in lanes:
        routes += [
            Route(-reach, -off, reach, -off),  # eastbound
            Route(reach, off, -reach, off),  # westbound
            Route(off, -reach, off, reach),  # northbound
            Route(-off, reach, -off, -reach),  # southbound
        ]
    return routes


def _inflate(b: BBox, k: float) -> BBox:
    return BBox(b.cx, b.cy, b.w * k, b.h * k)


def random_scene(
    n_cars: int,
    n_frames: int,
    seed: int,
    dwell_prob: float = 0.3,
    dwell_frames: tuple[int, int] = (15, 60),
    speed_range: tuple[float, float] = (6.0, 9.0),
    n_parked: int = 0,
    separation: float = 1.6,
    max_tries: int = 400,
    geometry: ImageGeometry = DEFAULT_GEOMETRY,
    stop_distance: float = 9.0,
    check_overlap: bool = True,
) -> SceneSpec:
    """Random traffic on :func:`intersection_routes` with non-overlapping cars.

    A candidate car is rejected when its box, inflated by ``separation``,
    touches the inflated box of an accepted car in any shared frame.
    Dwelling cars stop ``stop_distance`` metres before the crossing centre.
    Parked cars sit off-road for the whole sequence.
    """
    rng = np.random.default_rng(seed)
    base = SceneSpec(intersection_routes(), [], n_frames, geometry)
    routes = list(base.routes)
    cars: list[CarSpec] = []
    occupied: dict[int, list[BBox]] = {}

    def fits(boxes: dict[int, BBox]) -> bool:
        if not check_overlap:
            return True
        for f, b in boxes.items():
            bi = _inflate(b, separation)
            for o in occupied.get(f, ()):
                if iou(bi, _inflate(o, separation)) > 0.0:
                    return False
        return True

    def accept(car: CarSpec, boxes: dict[int, BBox]) -> None:
        cars.append(car)
        for f, b in boxes.items():
            occupied.setdefault(f, []).append(b)

    parked_spots = [(10.0, 10.0), (-10.5, 9.5), (9.5, -10.5), (-10.0, -10.0), (12.0, 3.0), (-3.0, 12.0)]
    for k in range(n_parked):
        x, y = parked_spots[k % len(parked_spots)]
        routes.append(Route(x, y, x + 1.0, y))
        car = CarSpec(len(routes) - 1, 0.0, 1)
        spec = replace(base, routes=routes, cars=[car])
        accept(car, _car_boxes(car, spec))

    spec = replace(base, routes=routes)
    n_lanes = len(base.routes)
    last_spawn = max(1, n_frames - 30)
    for _ in range(n_cars):
        for _try in range(max_tries):
            route = int(rng.integers(n_lanes))
            speed = float(rng.uniform(*speed_range))
            spawn = int(rng.integers(1, last_spawn + 1))
            dwell: tuple[tuple[int, int], ...] = ()
            if rng.random() < dwell_prob:
                stop_s = routes[route].length / 2 - stop_distance
                f_stop = spawn + int(math.ceil(stop_s / (speed / spec.fps)))
                length = int(rng.integers(dwell_frames[0], dwell_frames[1] + 1))
                if f_stop <= n_frames:
                    dwell = ((f_stop, min(n_frames, f_stop + length - 1)),)
            car = CarSpec(route, speed, spawn, dwell)
            boxes = _car_boxes(car, spec)
            if len(boxes) >= 2 and fits(boxes):
                accept(car, boxes)
                break
    return replace(spec, cars=cars)


def save_scene(spec: SceneSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")


def load_scene(path: str | Path) -> SceneSpec:
    return SceneSpec.from_dict(json.loads(Path(path).read_text()))
