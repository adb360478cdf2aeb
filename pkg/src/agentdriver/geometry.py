"""Planar geometry helpers shared by tools, reflection, and evaluation.

Frame convention (documented in docs/scene_schema.md): ego-centric, +y is
forward, +x is rightward, meters. Heading is measured counter-clockwise
from the +y axis, so heading 0 points forward, and the forward/right unit
vectors of a box with heading ``h`` are ``(-sin h, cos h)`` / ``(cos h, sin h)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DegenerateRange

Point = tuple[float, float]


@dataclass(frozen=True)
class RectRegion:
    """Axis-aligned rectangle in the ego frame, bounds inclusive."""

    x_start: float
    x_end: float
    y_start: float
    y_end: float

    def contains(self, x: float, y: float) -> bool:
        return self.x_start <= x <= self.x_end and self.y_start <= y <= self.y_end


def ego_frame_rect(x_start: float, x_end: float, y_start: float, y_end: float) -> RectRegion:
    """Build a query rectangle; rejects inverted or zero-area bounds."""
    if not (x_start < x_end and y_start < y_end):
        raise DegenerateRange(
            f"degenerate range ({x_start},{x_end})x({y_start},{y_end})"
        )
    return RectRegion(x_start, x_end, y_start, y_end)


# The two fixed query regions used by the surrounding/front detection tools:
# a 20m x 20m box centered on the ego and a 20m x 40m box extending forward.
SURROUNDING_RECT = RectRegion(-10.0, 10.0, -10.0, 10.0)
FRONT_RECT = RectRegion(-10.0, 10.0, 0.0, 40.0)


@dataclass(frozen=True)
class OrientedBox:
    """Rectangle with center, (length, width) and heading (see module docs)."""

    center: Point
    length: float
    width: float
    heading: float

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        dx = x - self.center[0]
        dy = y - self.center[1]
        sin_h = math.sin(self.heading)
        cos_h = math.cos(self.heading)
        # forward = (-sin h, cos h), right = (cos h, sin h)
        f = -sin_h * dx + cos_h * dy
        r = cos_h * dx + sin_h * dy
        return abs(f) <= self.length / 2.0 + margin and abs(r) <= self.width / 2.0 + margin

    def aabb(self, margin: float = 0.0) -> tuple[float, float, float, float]:
        """(min_x, min_y, max_x, max_y) of the box inflated by margin."""
        sin_h = math.sin(self.heading)
        cos_h = math.cos(self.heading)
        hl = self.length / 2.0 + margin
        hw = self.width / 2.0 + margin
        ex = abs(sin_h) * hl + abs(cos_h) * hw
        ey = abs(cos_h) * hl + abs(sin_h) * hw
        return (self.center[0] - ex, self.center[1] - ey, self.center[0] + ex, self.center[1] + ey)


def heading_from_step(prev: Point, cur: Point, fallback: float) -> float:
    """Heading of the motion from prev to cur; fallback when nearly static."""
    dx = cur[0] - prev[0]
    dy = cur[1] - prev[1]
    if math.hypot(dx, dy) < 1e-9:
        return fallback
    # heading is CCW from +y: forward = (-sin h, cos h) => h = atan2(-dx, dy)
    return math.atan2(-dx, dy)


def headings_for_trajectory(points: list[Point]) -> list[float]:
    """Per-waypoint ego heading: direction from the previous waypoint.

    Waypoint 0 is the ego origin; zero-motion steps inherit the previous
    heading (initially 0, i.e. straight ahead).
    """
    headings: list[float] = []
    prev: Point = (0.0, 0.0)
    last = 0.0
    for p in points:
        last = heading_from_step(prev, p, last)
        headings.append(last)
        prev = p
    return headings


def euclidean(a: Point, b: Point = (0.0, 0.0)) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])
