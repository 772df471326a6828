"""Exactness tests for the shifted dyadic cube systems."""

from fractions import Fraction

import numpy as np
import pytest

from confpack.ambient import (
    METRIC_L2,
    METRIC_LINF,
    AmbientSpace,
    CubeKey,
    DyadicFamily,
    PointIndexer,
    box_distance,
    covering_cube,
    cube_box,
    cube_contains,
    cube_of,
    min_corner,
    parent,
)

F1 = DyadicFamily(1)
F2 = DyadicFamily(2)
F3 = DyadicFamily(3)


def test_ambient_space_defaults():
    a = AmbientSpace(2, METRIC_LINF)
    assert a.ahlfors_lower == a.ahlfors_upper == 4.0
    b = AmbientSpace(2, METRIC_L2)
    assert b.ahlfors_lower == pytest.approx(np.pi)
    with pytest.raises(ValueError):
        AmbientSpace(0, METRIC_L2)
    with pytest.raises(ValueError):
        AmbientSpace(2, "l1")


def test_family_shift_enumeration():
    assert F2.systems == 9
    assert F2.shift(0) == (0, 0)
    assert F2.shift(1) == (1, 0)
    assert F2.shift(3) == (0, 1)
    shifts = {F2.shift(i) for i in range(9)}
    assert len(shifts) == 9


def test_cube_of_hand_cases():
    # plain dyadic grid
    assert cube_of((0.9,), 0, 0, F1).coords == (0,)
    # one-third shift, positive sign at even level, box [1/3, 4/3)
    c = cube_of((0.9,), 0, 1, F1)
    assert c.coords == (0,)
    lo, hi = cube_box(c, F1)
    assert lo == (Fraction(1, 3),) and hi == (Fraction(4, 3),)
    # level 1 has sign -1; shifts (1/3, 0) are system 1 in d=2
    c = cube_of((1.2, 3.7), 1, 1, F2)
    assert c.coords == (0, 1)


def test_cube_of_boundary_is_exact():
    # 1/3 is not a float, but cube boundaries at integer points are exact:
    # x = 1.0 must land in [1, 2) of the unshifted grid, never [0, 1).
    c = cube_of((1.0,), 0, 0, F1)
    assert c.coords == (1,)
    # shifted grid boundary 4/3 is irrational in binary; the float just
    # below it stays in [1/3, 4/3)
    x = 4.0 / 3.0
    c = cube_of((x,), 0, 1, F1)
    box = cube_box(c, F1)
    assert box[0][0] <= Fraction(x) < box[1][0]


def test_parent_hand_cases():
    p = parent(CubeKey(0, 0, (5,)), F1)
    assert (p.level, p.coords) == (1, (2,))
    p = parent(CubeKey(1, 0, (5,)), F1)
    assert (p.level, p.coords) == (1, (3,))
    lo, hi = cube_box(p, F1)
    assert lo == (Fraction(16, 3),) and hi == (Fraction(22, 3),)
    p = parent(CubeKey(2, 0, (4,)), F1)
    assert p.coords == (3,)


def test_parent_matches_min_corner_reindex():
    rng = np.random.default_rng(11)
    fam = F2
    for _ in range(300):
        x = rng.uniform(-50, 50, size=2)
        n = int(rng.integers(-6, 7))
        i = int(rng.integers(0, fam.systems))
        c = cube_of(x, n, i, fam)
        p = parent(c, fam)
        assert p == cube_of(min_corner(c, fam), n + 1, i, fam)


def test_nesting_and_tiling_sampled():
    rng = np.random.default_rng(5)
    for fam in (F1, F2, F3):
        for _ in range(200):
            x = rng.uniform(-100, 100, size=fam.dimension)
            n = int(rng.integers(-8, 9))
            i = int(rng.integers(0, fam.systems))
            c = cube_of(x, n, i, fam)
            assert cube_contains(c, x, fam)
            p = parent(c, fam)
            lo, hi = cube_box(c, fam)
            plo, phi = cube_box(p, fam)
            assert all(pl <= l and h <= ph for pl, l, h, ph in zip(plo, lo, hi, phi))
            # tiling: adjacent cubes at the same level do not contain x
            for j in range(fam.dimension):
                for dk in (-1, 1):
                    coords = list(c.coords)
                    coords[j] += dk
                    assert not cube_contains(CubeKey(i, n, tuple(coords)), x, fam)


def test_covering_hand_case():
    system, c = covering_cube([(0.9,), (1.1,)], F1)
    assert c.level == 0
    assert cube_contains(c, (0.9,), F1) and cube_contains(c, (1.1,), F1)
    # the unshifted grid is cut at 1.0, so a shifted system must be chosen
    assert system != 0


def test_covering_singleton():
    system, c = covering_cube([(2.5, -1.0)], F2, singleton_level=3)
    assert system == 0 and c.level == 3
    assert cube_contains(c, (2.5, -1.0), F2)


def test_covering_random_segments():
    rng = np.random.default_rng(7)
    for _ in range(400):
        m = int(rng.integers(-4, 5))
        base = rng.uniform(-40, 40, size=2)
        pts = base + rng.uniform(0, 2.0**m, size=(5, 2))
        system, c = covering_cube(pts, F2)
        assert c.level <= m + F2.covering_offset
        assert all(cube_contains(c, p, F2) for p in pts)


def test_boundary_offsets_interleave_by_thirds():
    # per axis, the three shift families' boundaries at level n form (2^n/3)Z
    for n in (-2, 0, 1, 3):
        side = Fraction(2) ** n
        sigma = -1 if n & 1 else 1
        offsets = set()
        for a in (0, 1, 2):
            for k in range(-6, 7):
                offsets.add(side * (k + Fraction(sigma * a, 3)))
        expect = {side * Fraction(t, 3) for t in range(-18, 19)}
        assert expect <= offsets


def test_box_distance_cases():
    c = CubeKey(0, 0, (0,))
    assert box_distance((0.5,), c, F1) == 0.0
    assert box_distance((3.0,), c, F1) == 2.0
    c2 = CubeKey(0, 0, (0, 0))
    assert box_distance((2.0, 2.0), c2, F2, METRIC_L2) == pytest.approx(np.sqrt(2.0))
    assert box_distance((2.0, 2.0), c2, F2, METRIC_LINF) == 1.0


def test_point_indexer_matches_cube_of():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-30, 30, size=(40, 2))
    idx = PointIndexer(pts, F2, min_level=-8)
    for n in (-8, -3, 0, 2, 5):
        for i in (0, 4, 8):
            coords = idx.coords(n, i)
            for v in range(len(pts)):
                assert tuple(int(t) for t in coords[v]) == cube_of(pts[v], n, i, F2).coords


def test_point_indexer_object_fallback():
    # huge scale separation forces the arbitrary-precision path
    pts = [(1e-9 * np.pi, 2.0), (1.0, 2.0 + 1e-9)]
    idx = PointIndexer(pts, F2, min_level=-40)
    coords = idx.coords(-35, 1)
    for v, p in enumerate(pts):
        assert tuple(int(t) for t in coords[v]) == cube_of(p, -35, 1, F2).coords


def test_scaled_box_consistency():
    rng = np.random.default_rng(9)
    pts = rng.uniform(-10, 10, size=(10, 2))
    idx = PointIndexer(pts, F2, min_level=-5)
    coords = idx.coords(2, 7)
    X = idx.scaled_points()
    side = idx.box_side_scaled(2)
    for v in range(10):
        lo = idx.box_lo_scaled(2, 7, coords[v])
        for j in range(2):
            assert lo[j] <= X[v][j] < lo[j] + side
