"""Vertex extremal length, flow duals, and annulus distance certificates.

The extremal length of the family of A-to-B paths maximizes, over vertex
weights omega normalized in l_d, the shortest weighted path length; a path
charges half the weight at its two endpoints and the full weight at interior
vertices (consistent with edge lengths (omega(u)+omega(v))/2).  Any unit
A-to-B flow certifies an upper bound through Hoelder: its vertex load's
l_{d/(d-1)} norm dominates the value, with the same half-load convention at
path endpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra

from .wgraph import WeightedGraphMetric


class ExtremalError(ValueError):
    pass


@dataclass(frozen=True)
class PathFamilySpec:
    """Implicit family of all simple paths from sources to targets."""

    sources: tuple
    targets: tuple

    def __post_init__(self):
        a = tuple(int(v) for v in self.sources)
        b = tuple(int(v) for v in self.targets)
        if not a or not b:
            raise ExtremalError("sources and targets must be nonempty")
        if set(a) & set(b):
            raise ExtremalError("sources and targets must be disjoint")
        object.__setattr__(self, "sources", a)
        object.__setattr__(self, "targets", b)


@dataclass
class VelResult:
    d: int
    value: float
    omega: np.ndarray
    primal: float
    dual: float
    gap: float
    iterations: int
    converged: bool
    load: np.ndarray = field(default=None, repr=False)

    def to_json_obj(self) -> dict:
        return {
            "d": self.d,
            "value": self.value,
            "primal": self.primal,
            "dual": self.dual,
            "gap": self.gap,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def norm_ld(omega: np.ndarray, d: float) -> float:
    if d == math.inf:
        return float(np.max(np.abs(omega)))
    return float(np.sum(np.abs(omega) ** d) ** (1.0 / d))


def _shortest_path(adjacency, omega, spec: PathFamilySpec):
    """Best A-to-B path under half-endpoint lengths: (length, vertex list)."""
    metric = WeightedGraphMetric(adjacency, omega)
    dist, pred, src = dijkstra(
        metric.graph,
        directed=False,
        indices=np.asarray(spec.sources, dtype=np.int64),
        return_predecessors=True,
        min_only=True,
    )
    tgt = np.asarray(spec.targets, dtype=np.int64)
    b = int(tgt[np.argmin(dist[tgt])])
    if not np.isfinite(dist[b]):
        raise ExtremalError("no source-to-target path exists")
    path = [b]
    while pred[path[-1]] >= 0:
        path.append(int(pred[path[-1]]))
    return float(dist[b]), path[::-1]


def _path_coefficients(n: int, path: list[int]) -> np.ndarray:
    c = np.zeros(n)
    for v in path:
        c[v] += 1.0
    c[path[0]] -= 0.5
    c[path[-1]] -= 0.5
    return c


def _project_ball(w: np.ndarray, d: int) -> np.ndarray:
    """Euclidean projection onto the nonnegative part of the unit l_d ball.

    Exact for d = 1 (simplex-style threshold) and d = 2 (radial shrink);
    for d >= 3 the radial shrink is a retraction, not the metric projection,
    which is adequate because the objective is scale free.
    """
    w = np.maximum(w, 0.0)
    if d == 1:
        s = float(w.sum())
        if s <= 1.0:
            return w
        u = np.sort(w)[::-1]
        css = np.cumsum(u) - 1.0
        j = np.arange(1, len(w) + 1)
        rho = int(np.max(np.flatnonzero(u > css / j)))
        theta = css[rho] / (rho + 1.0)
        return np.maximum(w - theta, 0.0)
    nw = norm_ld(w, d)
    if nw > 1.0:
        w = w / nw
    return w


def vel_solve(
    adjacency,
    spec: PathFamilySpec,
    d: int,
    iterations: int = 2000,
    tol: float = 1e-3,
    eta0: float = 0.5,
    omega0: np.ndarray | None = None,
) -> VelResult:
    """Projected supergradient ascent for the vertex extremal length.

    Each step lengthens the current shortest path's vertices (half steps at
    its endpoints) and projects back to the unit l_d sphere; the best primal
    value ever seen is returned together with an independent flow-based dual
    bound.  The objective is scale invariant, so any positive starting weight
    gives the same trajectory after normalization.
    """
    adj = sparse.csr_matrix(adjacency)
    n = adj.shape[0]
    if d < 1:
        raise ExtremalError("d must be >= 1")
    w = np.ones(n) if omega0 is None else np.asarray(omega0, dtype=float).copy()
    if np.any(w < 0) or not np.any(w > 0):
        raise ExtremalError("starting weight must be nonnegative and nonzero")
    w /= norm_ld(w, d)
    best_val = -np.inf
    best_w = w.copy()
    for t in range(1, iterations + 1):
        raw, path = _shortest_path(adj, w, spec)
        val = raw / norm_ld(w, d)  # scale-free value; iterates may sit inside the ball
        if val > best_val:
            best_val = val
            best_w = w.copy()
        g = _path_coefficients(n, path)
        w = _project_ball(w + eta0 / (math.sqrt(t) * norm_ld(g, 2)) * g, d)
        if not np.any(w > 0):
            raise ExtremalError("weight collapsed to zero")
    dual, load = flow_dual_bound(adj, spec, d)
    if best_val > dual * (1.0 + 1e-9):
        raise ExtremalError(f"weak duality violated: primal {best_val} > dual {dual}")
    gap = max(0.0, dual - best_val)
    return VelResult(
        d=d,
        value=best_val,
        omega=best_w,
        primal=best_val,
        dual=dual,
        gap=gap,
        iterations=iterations,
        converged=gap <= tol * max(1.0, dual),
        load=load,
    )


def flow_dual_bound(adjacency, spec: PathFamilySpec, d: int, rounds: int = 32):
    """Unit A-to-B flow routed over ``rounds`` load-aware shortest paths.

    Returns the flow's vertex-load l_{d/(d-1)} norm (l_inf for d = 1), an
    upper bound for the extremal length by weak duality.  Path endpoints
    carry half loads, mirroring the length convention.
    """
    adj = sparse.csr_matrix(adjacency)
    n = adj.shape[0]
    if d < 1:
        raise ExtremalError("d must be >= 1")
    q = d / (d - 1.0) if d > 1 else math.inf
    cost_power = (q - 1.0) if d > 1 else 8.0
    load = np.zeros(n)
    delta = 1.0 / max(4, n)
    for _ in range(rounds):
        cost = (load + delta) ** cost_power
        _, path = _shortest_path(adj, cost, spec)
        load += _path_coefficients(n, path) / rounds
    return norm_ld(load, q), load


def enforce_regularity(adjacency, omega: np.ndarray, cprime: float) -> np.ndarray:
    """Smallest pointwise floor-and-Lipschitz repair of a vertex weight:

        omega'(x) = max(1/2, max_y cprime^(-hop(x, y)) omega(y)).

    The output is at least 1/2 everywhere and changes by at most a factor
    cprime across any edge.
    """
    if cprime <= 1.0:
        raise ExtremalError("cprime must be > 1")
    adj = sparse.csr_matrix(adjacency)
    n = adj.shape[0]
    om = np.asarray(omega, dtype=float)
    if np.any(om <= 0):
        raise ExtremalError("omega must be positive")
    # multi-source Dijkstra in the log domain via a virtual super-source
    top = float(np.max(om))
    logc = math.log(cprime)
    coo = adj.tocoo()
    rows = np.concatenate([coo.row, np.full(n, n)])
    cols = np.concatenate([coo.col, np.arange(n)])
    data = np.concatenate([np.full(len(coo.row), logc), np.log(top / om)])
    g = sparse.csr_matrix((data, (rows, cols)), shape=(n + 1, n + 1))
    dist = dijkstra(g, directed=True, indices=n)[:n]
    return np.maximum(0.5, top * np.exp(-dist))


def radii_schedule(cprime: float, eps: float, count: int, limit: float = 1e12) -> list[float]:
    """The doubling-comparison radius recurrence r_j = (16 c'/eps) c'^(2 r_{j-1})."""
    out = [1.0]
    for _ in range(count - 1):
        nxt = (16.0 * cprime / eps) * cprime ** (2.0 * out[-1])
        if nxt > limit:
            raise ExtremalError("radius schedule overflows; use fewer annuli or smaller cprime")
        out.append(nxt)
    return out


@dataclass
class CertificateResult:
    omega_z: np.ndarray
    ratio: float
    dist_term: float
    norm_term: float
    annuli_disjoint: bool
    annuli_sizes: list

    def to_json_obj(self) -> dict:
        return {
            "ratio": self.ratio,
            "dist_term": self.dist_term,
            "norm_term": self.norm_term,
            "annuli_disjoint": self.annuli_disjoint,
            "annuli_sizes": self.annuli_sizes,
        }


def parabolicity_certificate(
    adjacency,
    radii_weights: list[tuple[float, np.ndarray]],
    z: int,
    cprime: float,
    d: int,
) -> CertificateResult:
    """Annulus-supported weight around ``z`` and its distance-to-norm ratio.

    For each radius r_j with weight omega_j, the shell between the
    omega_j-balls of radii r_j/(8 cprime) and r_j around z contributes
    r_j^{-d} omega_j^d; the certificate is the resulting weight's distance
    from z to the complement of the hop ball of radius 2 r_n, divided by its
    l_d norm.  Pairwise-disjoint shells make the distance grow linearly in
    the number of annuli; overlap is reported, not fatal.
    """
    adj = sparse.csr_matrix(adjacency)
    n = adj.shape[0]
    radii = [float(r) for r, _ in radii_weights]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ExtremalError("radii must be strictly increasing")
    shells = []
    acc = np.zeros(n)
    for r, om in radii_weights:
        om = np.asarray(om, dtype=float)
        dist = WeightedGraphMetric(adj, om).dist(z)
        shell = (dist > r / (8.0 * cprime)) & (dist <= r)
        shells.append(shell)
        acc += r ** (-float(d)) * om**d * shell
    omega_z = acc ** (1.0 / d)
    hop = dijkstra(adj.astype(bool).astype(float), directed=False, indices=z, unweighted=True)
    targets = np.flatnonzero(hop > 2.0 * radii[-1])
    if len(targets) == 0:
        raise ExtremalError("target set empty: the hop ball of radius 2 r_n exhausts the graph")
    dz = WeightedGraphMetric(adj, omega_z).dist(z)
    dist_term = float(np.min(dz[targets]))
    norm_term = norm_ld(omega_z, d)
    disjoint = True
    for i in range(len(shells)):
        for j in range(i + 1, len(shells)):
            if np.any(shells[i] & shells[j]):
                disjoint = False
    return CertificateResult(
        omega_z=omega_z,
        ratio=dist_term / norm_term if norm_term > 0 else math.inf,
        dist_term=dist_term,
        norm_term=norm_term,
        annuli_disjoint=disjoint,
        annuli_sizes=[int(s.sum()) for s in shells],
    )
