"""Bounding-box arithmetic shared by every stage of the pipeline.

Boxes are stored center-based (cx, cy, w, h) in real-valued image pixels.
Corner-based (top-left x, y, w, h) only appears at file boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MIN_SIDE = 1.0


@dataclass(frozen=True, slots=True)
class BBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box needs positive width and height, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @classmethod
    def from_tlwh(cls, x: float, y: float, w: float, h: float) -> "BBox":
        return cls(x + w / 2.0, y + h / 2.0, w, h)

    def to_tlwh(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=float)


@dataclass(frozen=True, slots=True)
class ImageGeometry:
    width: float = 1024.0
    height: float = 1024.0
    center_x: float | None = None
    center_y: float | None = None
    max_radius: float | None = None

    def __post_init__(self) -> None:
        # frozen dataclass: fill derived defaults through object.__setattr__
        if self.center_x is None:
            object.__setattr__(self, "center_x", self.width / 2.0)
        if self.center_y is None:
            object.__setattr__(self, "center_y", self.height / 2.0)
        if self.max_radius is None:
            object.__setattr__(self, "max_radius", min(self.width, self.height) / 2.0)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "center_x": self.center_x,
            "center_y": self.center_y,
            "max_radius": self.max_radius,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageGeometry":
        return cls(**d)


DEFAULT_GEOMETRY = ImageGeometry()


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.cx + a.w / 2, b.cx + b.w / 2) - max(a.cx - a.w / 2, b.cx - b.w / 2)
    ih = min(a.cy + a.h / 2, b.cy + b.h / 2) - max(a.cy - a.h / 2, b.cy - b.h / 2)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # rounding in the edge arithmetic can push a self-overlap past 1
    return min(inter / (a.w * a.h + b.w * b.h - inter), 1.0)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two ``(N, 4)`` and ``(M, 4)`` arrays of cx, cy, w, h rows."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    ax0 = a[:, 0:1] - a[:, 2:3] / 2
    ax1 = a[:, 0:1] + a[:, 2:3] / 2
    ay0 = a[:, 1:2] - a[:, 3:4] / 2
    ay1 = a[:, 1:2] + a[:, 3:4] / 2
    bx0 = b[:, 0] - b[:, 2] / 2
    bx1 = b[:, 0] + b[:, 2] / 2
    by0 = b[:, 1] - b[:, 3] / 2
    by1 = b[:, 1] + b[:, 3] / 2
    iw = np.maximum(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0.0)
    ih = np.maximum(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0.0)
    inter = iw * ih
    union = a[:, 2:3] * a[:, 3:4] + b[:, 2] * b[:, 3] - inter
    return np.minimum(inter / union, 1.0)


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4))
    return np.array([(b.cx, b.cy, b.w, b.h) for b in boxes], dtype=float)


def radius(b: BBox, g: ImageGeometry = DEFAULT_GEOMETRY) -> float:
    return math.hypot(b.cx - g.center_x, b.cy - g.center_y)


def interpolate_box(start: BBox, end: BBox, t: float) -> BBox:
    """Linear blend of center and size; ``t=0`` gives ``start``, ``t=1`` gives ``end``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation fraction must lie in [0, 1], got {t}")
    if t == 0.0:
        return start
    if t == 1.0:
        return end
    return BBox(
        start.cx + t * (end.cx - start.cx),
        start.cy + t * (end.cy - start.cy),
        start.w + t * (end.w - start.w),
        start.h + t * (end.h - start.h),
    )


def extrapolate_box(a: BBox, b: BBox, steps: int, gap: int = 1, min_side: float = MIN_SIDE) -> BBox:
    """Continue the constant per-frame change from ``a`` to ``b``.

    ``a`` and ``b`` are ``gap`` frames apart. Negative ``steps`` count frames
    before ``a``, positive ones frames after ``b``. Width and height are
    clamped at ``min_side``.
    """
    if steps == 0:
        raise ValueError("steps must be non-zero")
    if gap < 1:
        raise ValueError("gap must be at least one frame")
    anchor = a if steps < 0 else b
    dcx = (b.cx - a.cx) / gap
    dcy = (b.cy - a.cy) / gap
    dw = (b.w - a.w) / gap
    dh = (b.h - a.h) / gap
    return BBox(
        anchor.cx + steps * dcx,
        anchor.cy + steps * dcy,
        max(min_side, anchor.w + steps * dw),
        max(min_side, anchor.h + steps * dh),
    )
