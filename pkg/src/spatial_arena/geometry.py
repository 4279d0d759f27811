"""Axis-aligned geometric primitives shared by the scene model, renderer and rewards.

All world coordinates are meters; pixel coordinates follow image convention
(x right, y down, origin at the top-left corner).
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in world meters, [x0, x1) x [y0, y1)."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def contains_point(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def contains_rect(self, other: "Rect", tol: float = 1e-9) -> bool:
        return (
            self.x0 - tol <= other.x0
            and self.y0 - tol <= other.y0
            and other.x1 <= self.x1 + tol
            and other.y1 <= self.y1 + tol
        )

    def intersect(self, other: "Rect") -> "Rect | None":
        x0 = max(self.x0, other.x0)
        y0 = max(self.y0, other.y0)
        x1 = min(self.x1, other.x1)
        y1 = min(self.y1, other.y1)
        if x1 <= x0 or y1 <= y0:
            return None
        return Rect(x0, y0, x1, y1)

    def expanded(self, margin: float) -> "Rect":
        return Rect(self.x0 - margin, self.y0 - margin, self.x1 + margin, self.y1 + margin)


@dataclass(frozen=True)
class BBox2D:
    """2D bounding box in BEV pixel coordinates, x_min < x_max and y_min < y_max."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def clamped(self, width: int, height: int) -> "BBox2D":
        """Clamp to an image of the given pixel size."""
        return BBox2D(
            min(max(self.x_min, 0.0), float(width)),
            min(max(self.y_min, 0.0), float(height)),
            min(max(self.x_max, 0.0), float(width)),
            min(max(self.y_max, 0.0), float(height)),
        )

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def bbox_iou(a: BBox2D, b: BBox2D) -> float:
    """Intersection-over-union of two axis-aligned boxes; 0 when either is degenerate."""
    ix0 = max(a.x_min, b.x_min)
    iy0 = max(a.y_min, b.y_min)
    ix1 = min(a.x_max, b.x_max)
    iy1 = min(a.y_max, b.y_max)
    iw = max(0.0, ix1 - ix0)
    ih = max(0.0, iy1 - iy0)
    inter = iw * ih
    if inter <= 0.0:
        return 0.0
    union = a.area + b.area - inter
    return inter / union if union > 0.0 else 0.0


@dataclass(frozen=True)
class AABB:
    """3D axis-aligned box in world meters."""

    x0: float
    y0: float
    z0: float
    x1: float
    y1: float
    z1: float

    @property
    def footprint(self) -> Rect:
        return Rect(self.x0, self.y0, self.x1, self.y1)

    @property
    def top_z(self) -> float:
        return self.z1

    def overlap_depth(self, other: "AABB") -> float:
        """Smallest axis penetration depth; <= 0 when the boxes do not interpenetrate."""
        dx = min(self.x1, other.x1) - max(self.x0, other.x0)
        dy = min(self.y1, other.y1) - max(self.y0, other.y0)
        dz = min(self.z1, other.z1) - max(self.z0, other.z0)
        return min(dx, dy, dz)

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.x0, self.y0, self.z0, self.x1, self.y1, self.z1)


def ray_aabb(
    origin: tuple[float, float, float],
    direction: tuple[float, float, float],
    box: AABB,
) -> float | None:
    """Nearest non-negative hit parameter t of a ray against a box (slab method).

    Returns None when the ray misses or the box lies entirely behind the origin.
    A ray starting inside the box hits at t = 0.
    """
    tmin = 0.0
    tmax = math.inf
    for o, d, lo, hi in (
        (origin[0], direction[0], box.x0, box.x1),
        (origin[1], direction[1], box.y0, box.y1),
        (origin[2], direction[2], box.z0, box.z1),
    ):
        if d == 0.0:
            if o < lo or o > hi:
                return None
            continue
        inv = 1.0 / d
        t0 = (lo - o) * inv
        t1 = (hi - o) * inv
        if t0 > t1:
            t0, t1 = t1, t0
        tmin = max(tmin, t0)
        tmax = min(tmax, t1)
        if tmin > tmax:
            return None
    return tmin


def view_direction(yaw_deg: float, pitch_deg: float) -> tuple[float, float, float]:
    """Unit view-direction vector for a yaw/pitch pair (roll does not affect it).

    Yaw 0 points along +x, measured counter-clockwise; pitch is elevation above
    the horizontal plane.
    """
    yaw = math.radians(yaw_deg)
    pitch = math.radians(pitch_deg)
    cp = math.cos(pitch)
    return (cp * math.cos(yaw), cp * math.sin(yaw), math.sin(pitch))


def angular_difference_deg(
    yaw_a: float, pitch_a: float, yaw_b: float, pitch_b: float
) -> float:
    """Great-circle angle in degrees between two view directions."""
    va = view_direction(yaw_a, pitch_a)
    vb = view_direction(yaw_b, pitch_b)
    dot = va[0] * vb[0] + va[1] * vb[1] + va[2] * vb[2]
    return math.degrees(math.acos(max(-1.0, min(1.0, dot))))
