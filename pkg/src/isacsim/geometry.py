"""Planar geometry helpers shared by the domain model, SCF and environment."""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

Point = Sequence[float]

_EPS = 1e-12


def signed_area(polygon: Sequence[Point]) -> float:
    """Shoelace area; positive for counter-clockwise vertex order."""
    total = 0.0
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i][0], polygon[i][1]
        x2, y2 = polygon[(i + 1) % n][0], polygon[(i + 1) % n][1]
        total += x1 * y2 - x2 * y1
    return 0.5 * total


def _orient(a: Point, b: Point, c: Point) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a: Point, b: Point, p: Point) -> bool:
    return (
        min(a[0], b[0]) - _EPS <= p[0] <= max(a[0], b[0]) + _EPS
        and min(a[1], b[1]) - _EPS <= p[1] <= max(a[1], b[1]) + _EPS
    )


def segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    """Closed segment intersection; touching endpoints count."""
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    if d1 == 0 and _on_segment(q1, q2, p1):
        return True
    if d2 == 0 and _on_segment(q1, q2, p2):
        return True
    if d3 == 0 and _on_segment(p1, p2, q1):
        return True
    if d4 == 0 and _on_segment(p1, p2, q2):
        return True
    return False


def is_simple(polygon: Sequence[Point]) -> bool:
    """True when no two non-adjacent edges touch."""
    n = len(polygon)
    if n < 3:
        return False
    for i in range(n):
        a1, a2 = polygon[i], polygon[(i + 1) % n]
        if a1[0] == a2[0] and a1[1] == a2[1]:
            return False
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            b1, b2 = polygon[j], polygon[(j + 1) % n]
            if segments_intersect(a1, a2, b1, b2):
                return False
    return True


def points_in_polygon(points: np.ndarray, polygon: Sequence[Point]) -> np.ndarray:
    """Vectorised membership test over an ``(N, 2)`` array; boundary is inside."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    px, py = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    boundary = np.zeros(len(pts), dtype=bool)
    n = len(polygon)
    for i in range(n):
        x1, y1 = float(polygon[i][0]), float(polygon[i][1])
        x2, y2 = float(polygon[(i + 1) % n][0]), float(polygon[(i + 1) % n][1])
        cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        within = (
            (px >= min(x1, x2) - _EPS)
            & (px <= max(x1, x2) + _EPS)
            & (py >= min(y1, y2) - _EPS)
            & (py <= max(y1, y2) + _EPS)
        )
        boundary |= (np.abs(cross) <= _EPS) & within
        straddles = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddles & (px < x_at)
    return inside | boundary


def point_in_polygon(point: Point, polygon: Sequence[Point]) -> bool:
    """Scalar form of :func:`points_in_polygon` (same boundary rule, no numpy overhead)."""
    px, py = float(point[0]), float(point[1])
    inside = False
    n = len(polygon)
    for i in range(n):
        x1, y1 = float(polygon[i][0]), float(polygon[i][1])
        x2, y2 = float(polygon[(i + 1) % n][0]), float(polygon[(i + 1) % n][1])
        cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
        if (
            abs(cross) <= _EPS
            and min(x1, x2) - _EPS <= px <= max(x1, x2) + _EPS
            and min(y1, y2) - _EPS <= py <= max(y1, y2) + _EPS
        ):
            return True
        if (y1 > py) != (y2 > py) and px < x1 + (py - y1) * (x2 - x1) / (y2 - y1):
            inside = not inside
    return inside


def polygon_within(inner: Sequence[Point], outer: Sequence[Point]) -> bool:
    """True when ``inner`` lies inside the closed region of ``outer``."""
    if not points_in_polygon(np.asarray(inner, dtype=float)[:, :2], outer).all():
        return False
    n, m = len(inner), len(outer)
    for i in range(n):
        a1, a2 = inner[i], inner[(i + 1) % n]
        mid = ((a1[0] + a2[0]) / 2.0, (a1[1] + a2[1]) / 2.0)
        if not point_in_polygon(mid, outer):
            return False
        for j in range(m):
            b1, b2 = outer[j], outer[(j + 1) % m]
            d1, d2 = _orient(b1, b2, a1), _orient(b1, b2, a2)
            d3, d4 = _orient(a1, a2, b1), _orient(a1, a2, b2)
            # proper crossings only; shared boundary is allowed
            if d1 * d2 < 0 and d3 * d4 < 0:
                return False
    return True


def bbox(polygon: Sequence[Point]) -> tuple[float, float, float, float]:
    xs = [p[0] for p in polygon]
    ys = [p[1] for p in polygon]
    return min(xs), min(ys), max(xs), max(ys)


def sample_polygon(polygon: Sequence[Point], resolution: int = 24) -> np.ndarray:
    """Cell-centre grid samples of the polygon, used for coverage fractions."""
    x0, y0, x1, y1 = bbox(polygon)
    xs = x0 + (np.arange(resolution) + 0.5) * (x1 - x0) / resolution
    ys = y0 + (np.arange(resolution) + 0.5) * (y1 - y0) / resolution
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    keep = points_in_polygon(pts, polygon)
    if not keep.any():
        # degenerate sliver: fall back to the vertices themselves
        return np.asarray(polygon, dtype=float)[:, :2]
    return pts[keep]


def in_sector(
    points: np.ndarray,
    center: Point,
    range_m: float,
    azimuth_deg: float = 0.0,
    width_deg: float = 360.0,
) -> np.ndarray:
    """Mask of points within ``range_m`` of ``center`` and inside the sector."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    dx = pts[:, 0] - center[0]
    dy = pts[:, 1] - center[1]
    mask = dx * dx + dy * dy <= range_m * range_m + _EPS
    if width_deg >= 360.0:
        return mask
    bearing = np.degrees(np.arctan2(dy, dx))
    diff = (bearing - azimuth_deg + 180.0) % 360.0 - 180.0
    at_origin = (dx == 0) & (dy == 0)
    return mask & ((np.abs(diff) <= width_deg / 2.0 + 1e-9) | at_origin)


def segment_blocked(a: Point, b: Point, walls: Iterable[tuple[Point, Point]]) -> bool:
    return any(segments_intersect(a, b, w0, w1) for w0, w1 in walls)


def distance(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])
