"""Ambient space and hierarchical dyadic cube systems.

The ambient space is R^d with the sup or Euclidean metric and Lebesgue-type
measure.  On top of it we build Q = 3^d hierarchical systems of half-open
dyadic cubes.  System ``i`` is the standard dyadic grid shifted, per axis, by
one of {0, 1/3, 2/3} with a sign that alternates with the level::

    level-n cubes of system i:   2^n * ([0,1)^d + k + (-1)^n * alpha_i)

Alternating the sign is what makes consecutive levels nest; with a fixed
shift the grids would not refine each other.  All cube indexing is carried
out in exact integer arithmetic so that tiling and nesting hold without any
floating-point boundary ambiguity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

METRIC_LINF = "linf"
METRIC_L2 = "l2"

# Numbers known to keep the vectorized int64 index path overflow-free.
_INT64_SAFE = 1 << 62


def unit_ball_volume(d: int, metric: str) -> float:
    """Volume of the unit ball of R^d in the given metric."""
    if metric == METRIC_LINF:
        return 2.0**d
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


@dataclass(frozen=True)
class AmbientSpace:
    """R^d with a metric and the volume constants of its metric balls.

    ``ahlfors_lower``/``ahlfors_upper`` are the constants c1 <= c2 with
    c1 r^d <= vol(B(x,r)) <= c2 r^d; for Lebesgue measure both equal the
    unit-ball volume.
    """

    dimension: int
    metric_kind: str = METRIC_LINF
    ahlfors_lower: float = 0.0
    ahlfors_upper: float = 0.0

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.metric_kind not in (METRIC_LINF, METRIC_L2):
            raise ValueError(f"unknown metric {self.metric_kind!r}")
        if self.ahlfors_lower == 0.0 and self.ahlfors_upper == 0.0:
            v = unit_ball_volume(self.dimension, self.metric_kind)
            object.__setattr__(self, "ahlfors_lower", v)
            object.__setattr__(self, "ahlfors_upper", v)
        if not (0.0 < self.ahlfors_lower <= self.ahlfors_upper):
            raise ValueError("need 0 < ahlfors_lower <= ahlfors_upper")

    def dist(self, x: np.ndarray, y: np.ndarray) -> float:
        g = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
        if self.metric_kind == METRIC_LINF:
            return float(np.max(g))
        return float(np.sqrt(np.sum(g * g)))


@dataclass(frozen=True)
class DyadicFamily:
    """The ensemble of Q = 3^d adjacent dyadic hierarchical cube systems.

    base:           cube side ratio between consecutive levels (2)
    covering_offset: levels above the diameter scale at which a covering
                     cube is guaranteed to exist (2)
    child_stride:   level gap used when probing a cube's children (6)
    """

    dimension: int
    base: int = field(default=2, init=False)
    covering_offset: int = field(default=2, init=False)
    child_stride: int = field(default=6, init=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")

    @property
    def systems(self) -> int:
        return 3**self.dimension

    def shift(self, system: int) -> tuple[int, ...]:
        """Per-axis shift numerators (thirds) of a system, in {0, 1, 2}^d."""
        if not 0 <= system < self.systems:
            raise ValueError(f"system {system} out of range 0..{self.systems - 1}")
        return tuple((system // 3**j) % 3 for j in range(self.dimension))


@dataclass(frozen=True, order=True)
class CubeKey:
    """Address of one cube: system index, level, integer lattice coordinates.

    The cube's box is 2^level * [k_j + s*a_j/3, k_j + 1 + s*a_j/3) per axis,
    with s = (-1)^level and a = family.shift(system).
    """

    system: int
    level: int
    coords: tuple[int, ...]


def level_sign(level: int) -> int:
    return -1 if level & 1 else 1


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    return Fraction(float(x))


def _floor_index(p: int, q: int, level: int, a: int, sigma: int) -> int:
    # floor(x / 2^level - sigma*a/3) for x = p/q, exact.
    if level >= 0:
        pw = 1 << level
        return (3 * p - sigma * a * q * pw) // (3 * q * pw)
    pw = 1 << (-level)
    return (3 * p * pw - sigma * a * q) // (3 * q)


def cube_of(x: Sequence, level: int, system: int, family: DyadicFamily) -> CubeKey:
    """Unique level-``level`` cube of ``system`` containing the point ``x``.

    Exact for any float/int/Fraction coordinates: floats are treated as the
    dyadic rationals they are.
    """
    shift = family.shift(system)
    sigma = level_sign(level)
    coords = []
    for xj, aj in zip(x, shift, strict=True):
        f = _as_fraction(xj)
        coords.append(_floor_index(f.numerator, f.denominator, level, aj, sigma))
    return CubeKey(system, level, tuple(coords))


def cube_box(cube: CubeKey, family: DyadicFamily) -> tuple[tuple[Fraction, ...], tuple[Fraction, ...]]:
    """Exact half-open box [lo, hi) of a cube, per axis."""
    shift = family.shift(cube.system)
    sigma = level_sign(cube.level)
    side = Fraction(2) ** cube.level
    lo = tuple(side * (k + Fraction(sigma * a, 3)) for k, a in zip(cube.coords, shift))
    hi = tuple(l + side for l in lo)
    return lo, hi


def cube_box_float(cube: CubeKey, family: DyadicFamily) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = cube_box(cube, family)
    return np.array([float(v) for v in lo]), np.array([float(v) for v in hi])


def cube_contains(cube: CubeKey, x: Sequence, family: DyadicFamily) -> bool:
    """Exact membership test x in [lo, hi)."""
    lo, hi = cube_box(cube, family)
    for xj, lj, hj in zip(x, lo, hi, strict=True):
        f = _as_fraction(xj)
        if not (lj <= f < hj):
            return False
    return True


def min_corner(cube: CubeKey, family: DyadicFamily) -> tuple[Fraction, ...]:
    return cube_box(cube, family)[0]


def parent(cube: CubeKey, family: DyadicFamily) -> CubeKey:
    """The unique cube one level up (same system) containing ``cube``."""
    # Indexing the min corner at level+1 is the definition; the closed form
    # k' = (k + sigma*a) // 2 is equivalent and avoids the Fraction round trip.
    shift = family.shift(cube.system)
    sigma = level_sign(cube.level)
    coords = tuple((k + sigma * a) // 2 for k, a in zip(cube.coords, shift))
    return CubeKey(cube.system, cube.level + 1, coords)


def diam_linf_exact(points: Sequence[Sequence]) -> Fraction:
    pts = [[_as_fraction(c) for c in p] for p in points]
    d = len(pts[0])
    best = Fraction(0)
    for j in range(d):
        col = [p[j] for p in pts]
        best = max(best, max(col) - min(col))
    return best


def _ceil_log2(x: Fraction) -> int:
    """Smallest m with x <= 2^m, for x > 0, exact."""
    p, q = x.numerator, x.denominator
    m = p.bit_length() - q.bit_length()
    # bit lengths put m within one of the answer; fix up by exact comparison
    while x > Fraction(2) ** m:
        m += 1
    while x <= Fraction(2) ** (m - 1):
        m -= 1
    return m


def covering_cube(
    points: Sequence[Sequence], family: DyadicFamily, singleton_level: int = 0
) -> tuple[int, CubeKey]:
    """A system index and cube at level m+2 containing all of ``points``.

    Here 2^m bounds the sup-metric diameter of the point set.  Existence is
    guaranteed: at level m+2 the three shifted boundary families per axis are
    2^(m+2)/3 > diam apart, so the set straddles at most one family per axis
    and some shift combination avoids all of them.
    """
    points = list(points)
    if not points:
        raise ValueError("empty point set")
    diam = diam_linf_exact(points)
    if diam == 0:
        c = cube_of(points[0], singleton_level, 0, family)
        return 0, c
    level = _ceil_log2(diam) + family.covering_offset
    for system in range(family.systems):
        c = cube_of(points[0], level, system, family)
        if all(cube_contains(c, p, family) for p in points[1:]):
            return system, c
    raise AssertionError("covering cube not found; dyadic ensemble is broken")


def box_distance(x: Sequence, cube: CubeKey, family: DyadicFamily, metric: str = METRIC_LINF) -> float:
    """Distance from a point to (the closure of) a cube's box."""
    lo, hi = cube_box_float(cube, family)
    xv = np.asarray(x, dtype=float)
    gaps = np.maximum(0.0, np.maximum(lo - xv, xv - hi))
    if metric == METRIC_LINF:
        return float(np.max(gaps))
    return float(np.sqrt(np.sum(gaps * gaps)))


class PointIndexer:
    """Bulk exact cube indexing for a fixed point set.

    Every coordinate is stored as the exact integer X = x * 3 * 2^L, after
    which the index of the containing cube at any level n >= -L is a pure
    integer shift-and-divide.  A vectorized int64 path is used when the
    magnitudes fit; otherwise arbitrary-precision Python integers.
    """

    def __init__(self, points: Sequence[Sequence], family: DyadicFamily, min_level: int):
        self.family = family
        self.n_points = len(points)
        self.dimension = family.dimension
        fracs = [[_as_fraction(c) for c in p] for p in points]
        max_exp = 0
        for row in fracs:
            for f in row:
                q = f.denominator
                e = q.bit_length() - 1
                if (1 << e) != q:
                    raise ValueError("coordinates must be dyadic rationals (floats are)")
                max_exp = max(max_exp, e)
        self.scale_exp = max(max_exp, -min_level)
        self.min_level = -self.scale_exp
        scaled = [
            [3 * f.numerator * (1 << (self.scale_exp - (f.denominator.bit_length() - 1))) for f in row]
            for row in fracs
        ]
        self._scaled_int = scaled
        self._max_abs = max((abs(v) for row in scaled for v in row), default=0)
        self._np = None
        if self._max_abs < _INT64_SAFE:
            self._np = np.array(scaled, dtype=np.int64).reshape(self.n_points, self.dimension)

    def _int64_ok(self, level: int) -> bool:
        return (
            self._np is not None
            and 3 * (1 << (self.scale_exp + level)) < _INT64_SAFE
            and self._max_abs + 2 * (1 << (self.scale_exp + level)) < _INT64_SAFE
        )

    def coords(self, level: int, system: int) -> np.ndarray:
        """(n_points, d) integer cube coordinates at ``level`` in ``system``."""
        if level < self.min_level:
            raise ValueError(f"level {level} below exact range (min {self.min_level})")
        shift = self.family.shift(system)
        sigma = level_sign(level)
        denom = 3 * (1 << (self.scale_exp + level))
        offs = [sigma * a * (1 << (self.scale_exp + level)) for a in shift]
        if self._int64_ok(level):
            off = np.array(offs, dtype=np.int64)
            return (self._np - off) // np.int64(denom)
        out = np.empty((self.n_points, self.dimension), dtype=object)
        for v, row in enumerate(self._scaled_int):
            for j in range(self.dimension):
                out[v, j] = (row[j] - offs[j]) // denom
        return out

    def scaled_points(self) -> list[list[int]]:
        return self._scaled_int

    def box_lo_scaled(self, level: int, system: int, coords: Iterable[int]) -> list[int]:
        """Min corner of a cube in the same X = x*3*2^L integer scale."""
        shift = self.family.shift(system)
        sigma = level_sign(level)
        pw = 1 << (self.scale_exp + level)
        return [(3 * k + sigma * a) * pw for k, a in zip(coords, shift)]

    def box_side_scaled(self, level: int) -> int:
        return 3 * (1 << (self.scale_exp + level))
