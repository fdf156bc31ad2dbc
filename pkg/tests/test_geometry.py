from __future__ import annotations

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from isacsim import geometry

SQUARE = [(0, 0), (4, 0), (4, 4), (0, 4)]
L_SHAPE = [(0, 0), (6, 0), (6, 2), (2, 2), (2, 6), (0, 6)]


def test_signed_area_matches_rectangle_and_orientation():
    assert geometry.signed_area(SQUARE) == 16.0
    assert geometry.signed_area(SQUARE[::-1]) == -16.0
    # L shape = 6x2 + 2x4
    assert geometry.signed_area(L_SHAPE) == 20.0


def test_point_in_polygon_boundary_counts_as_inside():
    assert geometry.point_in_polygon((2, 2), SQUARE)
    assert geometry.point_in_polygon((0, 2), SQUARE)
    assert geometry.point_in_polygon((4, 4), SQUARE)
    assert not geometry.point_in_polygon((4.01, 2), SQUARE)
    assert not geometry.point_in_polygon((4, 4), L_SHAPE)
    assert geometry.point_in_polygon((1, 5), L_SHAPE)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-2, 8), st.floats(-2, 8)), min_size=1, max_size=40))
def test_scalar_and_vector_membership_agree(points):
    arr = np.asarray(points, dtype=float)
    vec = geometry.points_in_polygon(arr, L_SHAPE)
    assert [geometry.point_in_polygon(p, L_SHAPE) for p in points] == list(vec)


def test_is_simple_rejects_bow_tie_and_duplicates():
    assert geometry.is_simple(SQUARE)
    assert not geometry.is_simple([(0, 0), (4, 4), (4, 0), (0, 4)])
    assert not geometry.is_simple([(0, 0), (0, 0), (4, 0), (0, 4)])
    assert not geometry.is_simple([(0, 0), (1, 1)])


def test_polygon_within_allows_shared_edges_but_not_crossings():
    assert geometry.polygon_within([(0, 0), (2, 0), (2, 2), (0, 2)], SQUARE)
    assert geometry.polygon_within(SQUARE, SQUARE)
    assert not geometry.polygon_within([(3, 3), (5, 3), (5, 5), (3, 5)], SQUARE)
    # vertices inside the L but the square spans its notch
    assert not geometry.polygon_within([(1, 1), (5, 1), (5, 5), (1, 5)], L_SHAPE)


def test_in_sector_respects_range_and_width():
    pts = np.array([[1, 0], [0, 1], [-1, 0], [3, 0], [0.7, 0.7]])
    mask = geometry.in_sector(pts, (0, 0), 2.0, azimuth_deg=0.0, width_deg=90.0)
    assert list(mask) == [True, False, False, False, True]
    assert geometry.in_sector(pts, (0, 0), 2.0).tolist() == [True, True, True, False, True]


def test_segments_and_walls():
    assert geometry.segments_intersect((0, 0), (2, 2), (0, 2), (2, 0))
    assert geometry.segments_intersect((0, 0), (1, 0), (1, 0), (2, 5))  # touching
    assert not geometry.segments_intersect((0, 0), (1, 0), (0, 1), (1, 1))
    wall = [((5, -1), (5, 1))]
    assert geometry.segment_blocked((0, 0), (10, 0), wall)
    assert not geometry.segment_blocked((0, 2), (10, 2), wall)


def test_sample_polygon_covers_area_fraction():
    pts = geometry.sample_polygon(L_SHAPE, resolution=60)
    x0, y0, x1, y1 = geometry.bbox(L_SHAPE)
    frac = len(pts) / 60**2
    assert math.isclose(frac, 20 / ((x1 - x0) * (y1 - y0)), abs_tol=0.02)
    assert geometry.distance((0, 0), (3, 4)) == 5.0
