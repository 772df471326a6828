"""Construction of the uniformizing conformal vertex weight.

The weight is assembled from multiscale occupancy statistics of the packing's
representative points inside every shifted dyadic cube system:

* Every cube (C, n) gets a *level*: the largest j such that at least 2^j
  points of C escape every single cube s = 6 levels further down.  A flow
  argument ("features cannot repeat too often") caps how many cubes can carry
  level j by 2s|V|/2^j, and the truncated level by 4s|V|/2^j.  Both caps are
  asserted on every instance we ever build.

* A cube with truncated level j spreads a scale-matched bump over the bodies
  meeting its 2*tau*2^n neighborhood:

      theta = 2^(j/d*) / (1 + k - j)^(2/d*) * min(2^-n, 1/omega0(v)),

  where omega0(v) = diam(S_v), d* = max(d, 2), and k >= 3 is the scale
  parameter.  The min-clamp tames bodies larger than the cube.

* Per system, omega_P(v) = omega0(v) * (sum_cubes theta^d*)^(1/d*); the final
  weight sums the Q systems and is rescaled so that the d*-th power averages
  to exactly one over the vertices.

The geometry sweep (level tables plus cube supports) does not depend on k, so
one `WeightEngine` serves every scale and the combined weight cheaply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .ambient import (
    METRIC_LINF,
    CubeKey,
    DyadicFamily,
    PointIndexer,
    box_distance,
)
from .packing import QuasiPackedGraph

_LEV_CAP = 48  # raw levels are <= log2|V| + 1; cap only sizes the tensor


class WeightError(ValueError):
    pass


class LevelCountError(AssertionError):
    """The pigeonhole bound on level counts failed: implementation bug."""


def d_star(d: int) -> int:
    return max(int(d), 2)


def floor_log2(x: float) -> int:
    m, e = math.frexp(x)
    if m <= 0:
        raise ValueError("positive value required")
    return e - 1


def ceil_log2(x: float) -> int:
    m, e = math.frexp(x)
    if m <= 0:
        raise ValueError("positive value required")
    return e - 1 if m == 0.5 else e


@dataclass(frozen=True)
class PackingGeometry:
    """Per-vertex base scale omega0 = diam(S_v) and comparability constants."""

    omega0: np.ndarray
    k0: float = 1.0
    k1: float = 1.0

    def __post_init__(self):
        if np.any(self.omega0 <= 0):
            raise WeightError("omega0 must be positive")
        if self.k0 < 1 or self.k1 < 1:
            raise WeightError("comparability constants must be >= 1")


def geometry_of(qpg: QuasiPackedGraph) -> PackingGeometry:
    # bodies are exact balls: diam = 2r, and for an edge dist(x, y) <=
    # (1 + tau/2)(diam_u + diam_v)
    return PackingGeometry(qpg.packing.diameters.copy(), 1.0, 1.0 + qpg.tau / 2.0)


def level_window(qpg: QuasiPackedGraph, family: DyadicFamily | None = None) -> tuple[int, int]:
    """Level range [n_bot, n_top] that can carry defined cube levels."""
    family = family or DyadicFamily(qpg.packing.dimension)
    p = qpg.packing
    n_bot = floor_log2(float(2.0 * p.radii.min())) - 1
    lo = np.min(p.centers - p.radii[:, None], axis=0)
    hi = np.max(p.centers + p.radii[:, None], axis=0)
    ext = hi - lo
    diam = float(np.max(ext)) if p.metric == METRIC_LINF else float(np.sqrt(np.sum(ext * ext)))
    n_top = ceil_log2(max(diam, 2.0 * p.radii.min())) + family.covering_offset
    return n_bot, n_top


@dataclass
class LevelTable:
    """Defined cube levels of one hierarchical system.

    ``levels`` maps (level, coords) to the truncated level lev* in {0..k};
    ``raw`` holds the untruncated value; ``occupied`` indexes cubes holding
    at least two representative points over the same window.
    """

    system: int
    k: int
    stride: int
    n_points: int
    levels: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    occupied: dict = field(default_factory=dict)

    def raw_level_counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for j in self.raw.values():
            out[j] = out.get(j, 0) + 1
        return out

    def truncated_level_counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for j in self.levels.values():
            out[j] = out.get(j, 0) + 1
        return out

    def assert_count_bounds(self) -> None:
        s, n = self.stride, self.n_points
        for j, c in self.raw_level_counts().items():
            if c > 2.0 * s * n / 2.0**j:
                raise LevelCountError(
                    f"system {self.system}: {c} cubes at raw level {j} exceeds {2 * s * n / 2**j:.1f}"
                )
        for j, c in self.truncated_level_counts().items():
            if c > 4.0 * s * n / 2.0**j:
                raise LevelCountError(
                    f"system {self.system}: {c} cubes at truncated level {j} exceeds {4 * s * n / 2**j:.1f}"
                )

    def observed_count_constant(self) -> float:
        """max_j #(lev = j) * 2^j / (s |V|): the lemma guarantees <= 2."""
        best = 0.0
        for j, c in self.raw_level_counts().items():
            best = max(best, c * 2.0**j / (self.stride * self.n_points))
        return best


def _group_rows(coords: np.ndarray):
    """(unique row array/list, inverse index, counts) for integer rows."""
    if coords.dtype == object:
        seen: dict[tuple, int] = {}
        inv = np.empty(len(coords), dtype=np.int64)
        rows = []
        for i in range(len(coords)):
            key = tuple(coords[i])
            j = seen.get(key)
            if j is None:
                j = len(rows)
                seen[key] = j
                rows.append(key)
            inv[i] = j
        counts = np.bincount(inv, minlength=len(rows))
        return rows, inv, counts
    uniq, inv, counts = np.unique(coords, axis=0, return_inverse=True, return_counts=True)
    return list(map(tuple, uniq)), inv.ravel(), counts


def _floor_log2_int(x: np.ndarray) -> np.ndarray:
    m, e = np.frexp(x.astype(float))
    return (e - 1).astype(np.int64)


def _defined_levels_for_system(
    indexer: PointIndexer, system: int, window: tuple[int, int], stride: int
):
    """Per level: (cube coord rows, raw levels, counts) for cubes with a level."""
    n_bot, n_top = window
    out = {}
    occupied = {}
    for n in range(n_bot, n_top + 1):
        coords_n = indexer.coords(n, system)
        rows_n, inv_n, cnt_n = _group_rows(coords_n)
        rows_c, child_inv, _ = _group_rows(indexer.coords(n - stride, system))
        n_child = len(rows_c)
        pair_keys = inv_n.astype(np.int64) * np.int64(n_child) + child_inv.astype(np.int64)
        upairs, pcounts = np.unique(pair_keys, return_counts=True)
        parent_idx = (upairs // n_child).astype(np.int64)
        mstar = np.zeros(len(rows_n), dtype=np.int64)
        np.maximum.at(mstar, parent_idx, pcounts)
        gap = cnt_n - mstar
        defined = gap >= 1
        occ = cnt_n >= 2
        if np.any(occ):
            occupied[n] = ([rows_n[i] for i in np.flatnonzero(occ)], cnt_n[occ])
        if not np.any(defined):
            continue
        lev = _floor_log2_int(np.maximum(gap, 1))
        keep = np.flatnonzero(defined)
        out[n] = ([rows_n[i] for i in keep], lev[keep], cnt_n[keep])
    return out, occupied


def build_level_table(
    points: Sequence[Sequence],
    family: DyadicFamily,
    system: int,
    k: int,
    window: tuple[int, int] | None = None,
) -> LevelTable:
    """Level table of one system over the relevant window, bounds asserted.

    ``window`` defaults to a range derived from the nearest-neighbor
    separation and the diameter of the point set.
    """
    if k < 3:
        raise WeightError("scale parameter k must be >= 3")
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if window is None:
        if len(pts) < 2:
            raise WeightError("window required for fewer than two points")
        tree = cKDTree(pts)
        dd, _ = tree.query(pts, k=2, p=np.inf)
        sep = float(np.min(dd[:, 1]))
        if sep <= 0:
            raise WeightError("duplicate points: pass an explicit window")
        ext = float(np.max(np.max(pts, axis=0) - np.min(pts, axis=0)))
        window = (floor_log2(sep) - 1, ceil_log2(max(ext, sep)) + family.covering_offset)
    stride = family.child_stride
    indexer = PointIndexer(pts, family, min_level=window[0] - stride)
    per_level, occupied = _defined_levels_for_system(indexer, system, window, stride)
    table = LevelTable(system=system, k=k, stride=stride, n_points=len(pts))
    for n, (rows, levs, cnts) in per_level.items():
        for row, lv, ct in zip(rows, levs, cnts):
            key = (n, tuple(int(t) for t in row))
            table.raw[key] = int(lv)
            table.levels[key] = min(int(lv), k)
    for n, (rows, cnts) in occupied.items():
        for row, ct in zip(rows, cnts):
            table.occupied[(n, tuple(int(t) for t in row))] = int(ct)
    table.assert_count_bounds()
    return table


def theta(
    qpg: QuasiPackedGraph,
    family: DyadicFamily,
    table: LevelTable,
    v: int,
    cube: tuple[int, tuple],
    k: int | None = None,
) -> float:
    """Reference single-point evaluation of the cube bump at vertex ``v``.

    ``cube`` is a (level, coords) key of ``table``; the cube must carry a
    defined level.
    """
    k = table.k if k is None else k
    n, coords = cube
    if (n, coords) not in table.levels:
        raise WeightError(f"cube {cube} has no defined level")
    lev_t = min(table.raw[(n, coords)], k)
    p = qpg.packing
    ds = d_star(p.dimension)
    key = CubeKey(table.system, n, tuple(coords))
    gap = box_distance(p.centers[v], key, family, p.metric)
    if gap > 2.0 * qpg.tau * 2.0**n + p.radii[v]:
        return 0.0
    omega0 = 2.0 * p.radii[v]
    return (
        2.0 ** (lev_t / ds)
        / (1.0 + k - lev_t) ** (2.0 / ds)
        * min(2.0**-n, 1.0 / omega0)
    )


@dataclass
class ConformalWeight:
    """A normalized conformal vertex weight with its provenance metadata."""

    omega: np.ndarray
    d_star: int
    scale: str
    pre_norm_mass: float
    normalization_factor: float
    systems: int
    exceptional_max: int = 0

    def mass(self) -> float:
        return float(np.mean(self.omega.astype(float) ** self.d_star))

    def assert_normalized(self, rel_tol: float = 1e-12) -> None:
        m = self.mass()
        if abs(m - 1.0) > rel_tol:
            raise WeightError(f"weight mass {m} deviates from 1 beyond {rel_tol}")

    def metadata(self) -> dict:
        return {
            "scale": self.scale,
            "d_star": self.d_star,
            "pre_norm_mass": self.pre_norm_mass,
            "normalization_factor": self.normalization_factor,
            "systems": self.systems,
            "exceptional_max": self.exceptional_max,
        }


def save_weight(w: ConformalWeight, csv_path, sidecar_path=None) -> None:
    with open(csv_path, "w") as fh:
        fh.write("vertex,omega\n")
        for i, val in enumerate(w.omega):
            fh.write(f"{i},{float(val)!r}\n")
    if sidecar_path is not None:
        import json

        meta = w.metadata()
        meta["k"] = int(w.scale[2:]) if w.scale.startswith("k=") else "combined"
        with open(sidecar_path, "w") as fh:
            json.dump(meta, fh, sort_keys=True)
            fh.write("\n")


def load_weight_values(csv_path) -> np.ndarray:
    vals = []
    with open(csv_path) as fh:
        header = fh.readline()
        if not header.startswith("vertex,omega"):
            raise WeightError("weight csv must start with 'vertex,omega'")
        for line in fh:
            if line.strip():
                _, val = line.split(",")
                vals.append(float(val))
    return np.asarray(vals)


class WeightEngine:
    """One geometry sweep over all systems; weights for any k on demand.

    The sweep records, per system, for every vertex v, level n and raw cube
    level j, the number of defined cubes at level n of raw level j whose
    2*tau*2^n neighborhood meets S_v.  Every scale's weight is then a
    reweighting of this tensor.
    """

    def __init__(self, qpg: QuasiPackedGraph, family: DyadicFamily | None = None):
        if qpg.n_vertices >= 2 and not qpg.is_connected():
            raise WeightError("graph must be connected")
        self.qpg = qpg
        p = qpg.packing
        self.family = family or DyadicFamily(p.dimension)
        self.window = level_window(qpg, self.family)
        self.ds = d_star(p.dimension)
        self.geometry = geometry_of(qpg)
        self.n_levels = self.window[1] - self.window[0] + 1
        self.level_values = np.arange(self.window[0], self.window[1] + 1)
        self.tables: list[LevelTable] = []
        self.max_raw_level = 0
        self.exceptional_max = 0
        self._count_tensors: list[np.ndarray] = []  # per system: (V, n_levels, LEV)
        self._sweep()

    # -- geometry sweep ----------------------------------------------------

    def _sweep(self) -> None:
        qpg = self.qpg
        p = qpg.packing
        fam = self.family
        n_bot, n_top = self.window
        stride = fam.child_stride
        V = qpg.n_vertices
        omega0 = self.geometry.omega0
        radii = p.radii
        centers = p.centers
        indexer = PointIndexer(centers, fam, min_level=n_bot - stride)
        # per-level small-body search trees, shared across systems
        small_trees: dict[int, tuple[cKDTree, np.ndarray]] = {}
        metric_p = np.inf if p.metric == METRIC_LINF else 2
        halfdiag = 0.5 if p.metric == METRIC_LINF else 0.5 * math.sqrt(p.dimension)
        for system in range(fam.systems):
            per_level, occupied = _defined_levels_for_system(indexer, system, self.window, stride)
            table = LevelTable(system=system, k=3, stride=stride, n_points=V)
            tensor = np.zeros((V, self.n_levels, _LEV_CAP), dtype=np.float64)
            for n, (rows, levs, cnts) in per_level.items():
                n_idx = n - n_bot
                side = 2.0**n
                levs = np.minimum(levs, _LEV_CAP - 1)
                for row, lv in zip(rows, levs):
                    key = (n, tuple(int(t) for t in row))
                    table.raw[key] = int(lv)
                rows_f = np.array([[float(t) for t in row] for row in rows])
                sigma = -1 if n & 1 else 1
                shift = np.array(fam.shift(system), dtype=float)
                lo = side * (rows_f + sigma * shift / 3.0)
                hi = lo + side
                reach = 2.0 * qpg.tau * side
                # small bodies via a tree around cube centers
                if n not in small_trees:
                    mask = omega0 <= 2.0**n
                    pts = centers[np.flatnonzero(mask)]
                    small_trees[n] = (
                        cKDTree(pts) if len(pts) else None,
                        np.flatnonzero(mask),
                    )
                tree, small_ids = small_trees[n]
                pairs_c, pairs_v = [], []
                if tree is not None and len(small_ids):
                    r_small_max = float(radii[small_ids].max())
                    q = tree.query_ball_point(
                        lo + 0.5 * side,
                        r=reach + r_small_max + halfdiag * side + 1e-9,
                        p=metric_p,
                    )
                    lens = np.fromiter((len(t) for t in q), dtype=np.int64, count=len(q))
                    if lens.sum():
                        cand_v = small_ids[np.concatenate([np.asarray(t, dtype=np.int64) for t in q if len(t)])]
                        cand_c = np.repeat(np.arange(len(rows)), lens)
                        keep = self._support_filter(cand_v, lo[cand_c], hi[cand_c], reach)
                        pairs_c.append(cand_c[keep])
                        pairs_v.append(cand_v[keep])
                # large bodies against every cube of the level
                big_ids = np.flatnonzero(omega0 > 2.0**n)
                if len(big_ids):
                    cand_c = np.repeat(np.arange(len(rows)), len(big_ids))
                    cand_v = np.tile(big_ids, len(rows))
                    keep = self._support_filter(cand_v, lo[cand_c], hi[cand_c], reach)
                    cc, vv = cand_c[keep], cand_v[keep]
                    pairs_c.append(cc)
                    pairs_v.append(vv)
                    if len(cc):
                        per_cube_big = np.bincount(cc, minlength=len(rows))
                        self.exceptional_max = max(self.exceptional_max, int(per_cube_big.max()))
                if not pairs_c:
                    continue
                cub = np.concatenate(pairs_c)
                ver = np.concatenate(pairs_v)
                flat = (ver * self.n_levels + n_idx) * _LEV_CAP + levs[cub]
                tensor += np.bincount(
                    flat, minlength=V * self.n_levels * _LEV_CAP
                ).reshape(V, self.n_levels, _LEV_CAP)
            for key, lv in table.raw.items():
                table.levels[key] = min(lv, table.k)
            for n, (rows, cnts) in occupied.items():
                for row, ct in zip(rows, cnts):
                    table.occupied[(n, tuple(int(t) for t in row))] = int(ct)
            table.assert_count_bounds()
            if table.raw:
                self.max_raw_level = max(self.max_raw_level, max(table.raw.values()))
            self.tables.append(table)
            self._count_tensors.append(tensor)
        # counts are small integers; trim the unused level tail and store compactly
        top = self.max_raw_level + 1
        self._count_tensors = [t[:, :, :top].astype(np.float32) for t in self._count_tensors]

    def _support_filter(self, verts, lo, hi, reach):
        p = self.qpg.packing
        x = p.centers[verts]
        gaps = np.maximum(0.0, np.maximum(lo - x, x - hi))
        if p.metric == METRIC_LINF:
            dist = np.max(gaps, axis=1)
        else:
            dist = np.sqrt(np.sum(gaps * gaps, axis=1))
        return dist <= reach + p.radii[verts]

    # -- weights -----------------------------------------------------------

    def table_for_k(self, system: int, k: int) -> LevelTable:
        base = self.tables[system]
        t = LevelTable(system=system, k=k, stride=base.stride, n_points=base.n_points)
        t.raw = dict(base.raw)
        t.levels = {key: min(lv, k) for key, lv in base.raw.items()}
        t.occupied = dict(base.occupied)
        t.assert_count_bounds()
        return t

    def _raw_weight(self, k: int) -> np.ndarray:
        if k < 3:
            raise WeightError("scale parameter k must be >= 3")
        ds = self.ds
        omega0 = self.geometry.omega0
        V = self.qpg.n_vertices
        # theta^ds factor per raw level value
        j = np.arange(self.max_raw_level + 1)
        jt = np.minimum(j, k)
        fac = 2.0**jt / (1.0 + k - jt) ** 2
        clamp = np.minimum(
            2.0 ** (-self.level_values)[None, :], (1.0 / omega0)[:, None]
        )  # (V, n_levels)
        raw = np.zeros(V)
        for tensor in self._count_tensors:
            acc = np.einsum("vnl,l->vn", tensor, fac)
            acc = np.sum(acc * clamp**ds, axis=1)
            raw += omega0 * acc ** (1.0 / ds)
        return raw

    def _normalize(self, raw: np.ndarray, scale: str) -> ConformalWeight:
        ds = self.ds
        mass = float(np.mean(raw**ds))
        if mass <= 0.0:
            raise WeightError("degenerate instance: weight vanishes everywhere")
        w = raw / mass ** (1.0 / ds)
        w = w / float(np.mean(w**ds)) ** (1.0 / ds)  # refinement pass
        out = ConformalWeight(
            omega=w,
            d_star=ds,
            scale=scale,
            pre_norm_mass=mass,
            normalization_factor=mass ** (1.0 / ds),
            systems=self.family.systems,
            exceptional_max=self.exceptional_max,
        )
        out.assert_normalized(1e-12)
        return out

    def weight(self, k: int, mass_ceiling: float | None = None) -> ConformalWeight:
        raw = self._raw_weight(k)
        w = self._normalize(raw, f"k={k}")
        if mass_ceiling is not None and w.pre_norm_mass > mass_ceiling:
            raise WeightError(
                f"pre-normalization mass {w.pre_norm_mass:.3g} exceeds ceiling {mass_ceiling}"
            )
        return w

    def combined(self, k_max: int, mass_ceiling: float | None = None) -> ConformalWeight:
        """Scale-combined weight: a 6/pi^2-weighted d*-power mean of the
        per-scale normalized weights for k = 3..k_max, renormalized."""
        if k_max < 3:
            raise WeightError("k_max must be >= 3")
        ds = self.ds
        acc = np.zeros(self.qpg.n_vertices)
        pre = 0.0
        for k in range(3, k_max + 1):
            wk = self.weight(k)
            acc += wk.omega**ds / float(k) ** 2
            pre = max(pre, wk.pre_norm_mass)
        raw = (6.0 / math.pi**2 * acc) ** (1.0 / ds)
        w = self._normalize(raw, f"combined:k_max={k_max}")
        w.pre_norm_mass = pre  # worst per-scale mass is the meaningful one
        if mass_ceiling is not None and pre > mass_ceiling:
            raise WeightError(f"pre-normalization mass {pre:.3g} exceeds ceiling {mass_ceiling}")
        return w


def build_weight_k(
    qpg: QuasiPackedGraph,
    k: int,
    family: DyadicFamily | None = None,
    mass_ceiling: float | None = None,
) -> ConformalWeight:
    return WeightEngine(qpg, family).weight(k, mass_ceiling)


def build_combined(
    qpg: QuasiPackedGraph,
    k_max: int,
    family: DyadicFamily | None = None,
    mass_ceiling: float | None = None,
) -> ConformalWeight:
    return WeightEngine(qpg, family).combined(k_max, mass_ceiling)
