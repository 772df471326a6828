"""Weighted path metric, balls, and growth profiles.

A conformal vertex weight omega turns each edge {u, v} into a segment of
length (omega(u) + omega(v)) / 2; path lengths therefore charge half the
weight at a path's two endpoints and the full weight at interior vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, dijkstra

INF = np.inf

ROOT_SAMPLE_CAP = 4096
ROOT_SAMPLE_SIZE = 64


class MetricError(ValueError):
    pass


class WeightedGraphMetric:
    """Shortest-path metric on a graph with vertex weights."""

    def __init__(self, adjacency: sparse.spmatrix, omega: np.ndarray):
        adj = sparse.csr_matrix(adjacency)
        n = adj.shape[0]
        om = np.asarray(omega, dtype=float).ravel()
        if len(om) != n:
            raise MetricError("omega length must match vertex count")
        if np.any(om < 0):
            raise MetricError("omega must be nonnegative")
        self.omega = om
        coo = sparse.triu(adj, k=1).tocoo()
        lengths = 0.5 * (om[coo.row] + om[coo.col])
        self.n_vertices = n
        self._edges_u = coo.row
        self._edges_v = coo.col
        self.graph = sparse.csr_matrix(
            (
                np.concatenate([lengths, lengths]),
                (np.concatenate([coo.row, coo.col]), np.concatenate([coo.col, coo.row])),
            ),
            shape=(n, n),
        )

    @property
    def edges(self) -> np.ndarray:
        return np.stack([self._edges_u, self._edges_v], axis=1)

    def edge_lengths(self) -> np.ndarray:
        return 0.5 * (self.omega[self._edges_u] + self.omega[self._edges_v])

    def dist(self, src: int) -> np.ndarray:
        """Exact single-source distances; unreachable vertices get +inf."""
        return dijkstra(self.graph, directed=False, indices=src)

    def dist_many(self, sources) -> np.ndarray:
        return dijkstra(self.graph, directed=False, indices=np.asarray(sources, dtype=np.int64))

    def dist_from_set(self, sources) -> np.ndarray:
        """Distance to the nearest of several sources (one Dijkstra sweep)."""
        return dijkstra(self.graph, directed=False, indices=np.asarray(sources, dtype=np.int64), min_only=True)

    def ball(self, x: int, radius: float) -> np.ndarray:
        """Vertices of the closed ball around x."""
        return np.flatnonzero(self.dist(x) <= radius)

    def subset_diam(self, vertices) -> float:
        """Exact metric diameter of a vertex subset (paths may leave it)."""
        idx = np.asarray(vertices, dtype=np.int64)
        if len(idx) == 0:
            raise MetricError("empty subset")
        if len(idx) == 1:
            return 0.0
        dd = self.dist_many(idx)[:, idx]
        return float(np.max(dd))

    def diameter(self) -> float:
        ncomp, _ = connected_components(self.graph, directed=False)
        if ncomp > 1:
            return INF
        d0 = self.dist(0)
        far = int(np.argmax(d0))
        return float(np.max(self.dist(far)))


@dataclass
class GrowthReport:
    weight_meta: dict
    entries: list = field(default_factory=list)
    roots_sampled: list = field(default_factory=list)

    def max_const_poly(self) -> float:
        return max(e["const_poly"] for e in self.entries)

    def max_const_polylog(self) -> float:
        return max(e["const_polylog"] for e in self.entries)

    def ball_at(self, radius: float) -> int:
        for e in self.entries:
            if e["R"] == radius:
                return e["max_ball"]
        raise KeyError(f"radius {radius} not in profile")

    def to_json_obj(self) -> dict:
        return {
            "weight_meta": self.weight_meta,
            "entries": self.entries,
            "roots_sampled": [int(r) for r in self.roots_sampled],
        }


def default_radii(diam: float) -> np.ndarray:
    """Half-power-of-two grid 2^(j/2) covering [1, diam]."""
    if not np.isfinite(diam) or diam < 1.0:
        return np.array([1.0])
    jmax = int(np.ceil(2.0 * np.log2(diam)))
    grid = 2.0 ** (0.5 * np.arange(jmax + 1))
    return np.unique(np.minimum(grid, diam))


def sample_roots(metric: WeightedGraphMetric, degrees: np.ndarray, seed: int = 0) -> np.ndarray:
    n = metric.n_vertices
    if n <= ROOT_SAMPLE_CAP:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    roots = set(rng.choice(n, size=ROOT_SAMPLE_SIZE, replace=False).tolist())
    roots.add(int(np.argmax(degrees)))
    return np.array(sorted(roots))


def growth_profile(
    metric: WeightedGraphMetric,
    d_star: int,
    radii=None,
    roots=None,
    weight_meta: dict | None = None,
    seed: int = 0,
) -> GrowthReport:
    """Max ball sizes over sampled roots, with polynomial-normalized constants.

    For each radius R the report records max_x |B(x, R)| together with
    |B|/R^d* and |B|/(R^d* * log^2(2+R)).
    """
    degrees = np.asarray((metric.graph != 0).sum(axis=1)).ravel()
    if roots is None:
        roots = sample_roots(metric, degrees, seed)
    roots = np.asarray(roots, dtype=np.int64)
    if len(roots) == 0:
        raise MetricError("need at least one root")
    if radii is None:
        radii = default_radii(metric.diameter())
    radii = np.asarray(sorted(set(float(r) for r in radii)))
    counts = np.zeros(len(radii), dtype=np.int64)
    for chunk in np.array_split(roots, max(1, len(roots) // 256)):
        dd = metric.dist_many(chunk).reshape(len(chunk), -1)
        for j, r in enumerate(radii):
            counts[j] = max(counts[j], int(np.max(np.sum(dd <= r, axis=1))))
    report = GrowthReport(weight_meta=dict(weight_meta or {}), roots_sampled=roots.tolist())
    for r, c in zip(radii, counts):
        poly = float(c) / r**d_star
        polylog = float(c) / (r**d_star * np.log(2.0 + r) ** 2)
        report.entries.append(
            {"R": float(r), "max_ball": int(c), "const_poly": poly, "const_polylog": polylog}
        )
    return report
