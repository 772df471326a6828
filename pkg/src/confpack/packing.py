"""Sphere packings, their quasi-tangency graphs, and validation.

Bodies are exact metric balls (center, radius) in R^d under the packing's
metric.  Edges of a quasi-packed graph are only required to join bodies that
are near-tangent relative to the smaller one:

    dist(S_u, S_v) <= tau * min(diam S_u, diam S_v)

with dist(S_u, S_v) = max(0, |c_u - c_v| - r_u - r_v).  Generators declare
a (tau, M) pair that their output provably satisfies; ``validate`` checks
tangency exactly on every edge and probes the bounded-multiplicity condition
over a structured witness set.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .ambient import METRIC_L2, METRIC_LINF, AmbientSpace, unit_ball_volume

_REL_TOL = 1e-9
DEFAULT_SIZE_CAP = 2_000_000


class PackingError(ValueError):
    pass


class PackingValidationError(PackingError):
    pass


@dataclass(frozen=True)
class Body:
    id: int
    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise PackingError(f"body {self.id}: radius must be positive")


class SpherePacking:
    """A finite family of metric balls in R^d."""

    def __init__(self, dimension, metric, tau, centers, radii, ids=None, meta=None):
        self.dimension = int(dimension)
        if metric not in (METRIC_LINF, METRIC_L2):
            raise PackingError(f"unknown metric {metric!r}")
        self.metric = metric
        self.tau = float(tau)
        self.centers = np.asarray(centers, dtype=float).reshape(-1, self.dimension)
        self.radii = np.asarray(radii, dtype=float).ravel()
        if len(self.radii) != len(self.centers):
            raise PackingError("centers/radii length mismatch")
        if np.any(self.radii <= 0):
            raise PackingError("radii must be positive")
        self.ids = list(range(len(self.radii))) if ids is None else list(ids)
        self.meta = dict(meta or {})

    def __len__(self):
        return len(self.radii)

    @property
    def diameters(self) -> np.ndarray:
        return 2.0 * self.radii

    def ambient(self) -> AmbientSpace:
        return AmbientSpace(self.dimension, self.metric)

    def center_dist(self, u: int, v: int) -> float:
        g = np.abs(self.centers[u] - self.centers[v])
        return float(np.max(g)) if self.metric == METRIC_LINF else float(np.sqrt(np.sum(g * g)))

    def body_dist(self, u: int, v: int) -> float:
        return max(0.0, self.center_dist(u, v) - self.radii[u] - self.radii[v])

    def subset(self, index: np.ndarray) -> "SpherePacking":
        return SpherePacking(
            self.dimension,
            self.metric,
            self.tau,
            self.centers[index],
            self.radii[index],
            [self.ids[i] for i in index],
            self.meta,
        )

    def to_json_obj(self) -> dict:
        return {
            "dimension": self.dimension,
            "metric": self.metric,
            "tau": self.tau,
            "bodies": [
                {"id": int(i), "center": [float(c) for c in ctr], "radius": float(r)}
                for i, ctr, r in zip(self.ids, self.centers, self.radii)
            ],
        }


def save_packing(packing: SpherePacking, path) -> None:
    with open(path, "w") as fh:
        json.dump(packing.to_json_obj(), fh, sort_keys=True)
        fh.write("\n")


def load_packing(path) -> SpherePacking:
    with open(path) as fh:
        obj = json.load(fh)
    bodies = obj["bodies"]
    return SpherePacking(
        obj["dimension"],
        obj["metric"],
        obj["tau"],
        [b["center"] for b in bodies],
        [b["radius"] for b in bodies],
        [b["id"] for b in bodies],
    )


class QuasiPackedGraph:
    """A finite graph together with its packing and (tau, M) parameters.

    Vertices are 0..n-1 aligned with the packing's bodies; the representative
    point of a vertex is its body's center.
    """

    def __init__(self, packing: SpherePacking, edges, tau: float, multiplicity: float):
        self.packing = packing
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        u = np.minimum(e[:, 0], e[:, 1])
        v = np.maximum(e[:, 0], e[:, 1])
        keep = u != v
        e = np.unique(np.stack([u[keep], v[keep]], axis=1), axis=0)
        self.edges = e
        self.tau = float(tau)
        self.multiplicity = float(multiplicity)
        self._adj = None
        if len(e) and (e.min() < 0 or e.max() >= len(packing)):
            raise PackingError("edge endpoint out of range")

    @property
    def n_vertices(self) -> int:
        return len(self.packing)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def representatives(self) -> np.ndarray:
        return self.packing.centers

    def adjacency(self) -> sparse.csr_matrix:
        if self._adj is None:
            n = self.n_vertices
            if len(self.edges):
                u, v = self.edges[:, 0], self.edges[:, 1]
                data = np.ones(2 * len(u))
                self._adj = sparse.csr_matrix(
                    (data, (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(n, n)
                )
            else:
                self._adj = sparse.csr_matrix((n, n))
        return self._adj

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency().sum(axis=1)).ravel().astype(np.int64)

    def is_connected(self) -> bool:
        if self.n_vertices <= 1:
            return True
        ncomp, _ = connected_components(self.adjacency(), directed=False)
        return ncomp == 1

    def largest_component(self) -> "QuasiPackedGraph":
        ncomp, labels = connected_components(self.adjacency(), directed=False)
        if ncomp <= 1:
            return self
        sizes = np.bincount(labels)
        keep = labels == int(np.argmax(sizes))
        remap = -np.ones(self.n_vertices, dtype=np.int64)
        remap[keep] = np.arange(int(keep.sum()))
        sub = self.packing.subset(np.flatnonzero(keep))
        mask = keep[self.edges[:, 0]] & keep[self.edges[:, 1]]
        new_edges = remap[self.edges[mask]]
        return QuasiPackedGraph(sub, new_edges, self.tau, self.multiplicity)


def save_graph(qpg: QuasiPackedGraph, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# vertices {qpg.n_vertices}\n")
        for u, v in qpg.edges:
            fh.write(f"{u} {v}\n")


def load_graph(path, packing: SpherePacking, tau=None, multiplicity=None) -> QuasiPackedGraph:
    edges = []
    n = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line.split()
                if len(parts) >= 3 and parts[1] == "vertices":
                    n = int(parts[2])
                continue
            u, v = line.split()
            edges.append((int(u), int(v)))
    if n is not None and n != len(packing):
        raise PackingError(f"graph declares {n} vertices but packing has {len(packing)}")
    return QuasiPackedGraph(
        packing,
        np.array(edges, dtype=np.int64).reshape(-1, 2),
        packing.tau if tau is None else tau,
        4.0 ** packing.dimension if multiplicity is None else multiplicity,
    )


def quasi_mult_bound(c1: float, c2: float, eta: float, s: float, alpha: float, d: int) -> float:
    """Closed-form cap on how many disjoint-ish round bodies of large diameter
    can come within ``alpha`` times their size of one point, in an Ahlfors
    d-regular space with constants c1 <= c2 and eta-round bodies overlapping
    at most ``s`` deep."""
    if min(c1, c2, eta, s) <= 0 or alpha < 0 or d < 1:
        raise ValueError("all arguments must be positive (alpha >= 0)")
    return s * (c2 / (c1 * eta)) * (1.0 + 2.0 * alpha) ** d


def _candidate_pairs(packing: SpherePacking, reach: float) -> np.ndarray:
    """Pairs (u, v) with center distance at most reach, as an (m,2) array."""
    n = len(packing)
    if n <= 1500:
        diff = packing.centers[:, None, :] - packing.centers[None, :, :]
        if packing.metric == METRIC_LINF:
            dd = np.max(np.abs(diff), axis=2)
        else:
            dd = np.sqrt(np.sum(diff * diff, axis=2))
        iu, iv = np.triu_indices(n, k=1)
        mask = dd[iu, iv] <= reach
        return np.stack([iu[mask], iv[mask]], axis=1)
    p = np.inf if packing.metric == METRIC_LINF else 2
    tree = cKDTree(packing.centers)
    pairs = tree.query_pairs(reach, p=p, output_type="ndarray")
    return pairs.reshape(-1, 2)


def extract_graph(packing: SpherePacking, tau: float) -> QuasiPackedGraph:
    """Maximal graph under the quasi-tangency rule at parameter tau."""
    if tau < 1:
        raise PackingError("tau must be >= 1")
    r = packing.radii
    reach = float(2.0 * r.max() * (1.0 + tau) + 1e-12)
    pairs = _candidate_pairs(packing, reach)
    if len(pairs):
        u, v = pairs[:, 0], pairs[:, 1]
        diff = np.abs(packing.centers[u] - packing.centers[v])
        if packing.metric == METRIC_LINF:
            cd = np.max(diff, axis=1)
        else:
            cd = np.sqrt(np.sum(diff * diff, axis=1))
        gap = np.maximum(0.0, cd - r[u] - r[v])
        lim = tau * 2.0 * np.minimum(r[u], r[v])
        keep = gap <= lim * (1.0 + _REL_TOL) + _REL_TOL
        pairs = pairs[keep]
    amb = packing.ambient()
    eta = 0.5**packing.dimension
    m = math.ceil(quasi_mult_bound(amb.ahlfors_lower, amb.ahlfors_upper, eta, 2.0, 1.0, packing.dimension))
    return QuasiPackedGraph(packing, pairs, tau, m)


# ---------------------------------------------------------------------------
# generators


def gen_grid(d: int, m: int, metric: str = METRIC_L2, size_cap: int = DEFAULT_SIZE_CAP):
    """m^d unit-spacing bodies of radius 1/2 whose declared graph is the grid."""
    if d < 1 or m < 2:
        raise PackingError("need d >= 1 and m >= 2")
    if m**d > size_cap:
        raise PackingError(f"grid size {m}^{d} exceeds cap {size_cap}")
    axes = [np.arange(1, m + 1, dtype=float)] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([g.ravel() for g in mesh], axis=1)
    n = len(centers)
    packing = SpherePacking(d, metric, 1.0, centers, np.full(n, 0.5), meta={"kind": "grid", "m": m})
    idx = np.arange(n).reshape([m] * d)
    edges = []
    for axis in range(d):
        a = np.take(idx, np.arange(m - 1), axis=axis).ravel()
        b = np.take(idx, np.arange(1, m), axis=axis).ravel()
        edges.append(np.stack([a, b], axis=1))
    qpg = QuasiPackedGraph(packing, np.concatenate(edges), 1.0, 3.0**d)
    return packing, qpg


def gen_rsa(
    d: int,
    count: int,
    radius_range: Sequence[float],
    seed: int,
    metric: str = METRIC_L2,
    tau: float = 1.0,
    box_side: float | None = None,
    max_tries_per_body: int = 400,
):
    """Random sequential adsorption: propose, accept iff interior-disjoint.

    Radii are log-uniform in ``radius_range``.  Deterministic under ``seed``.
    If the rejection budget runs out the packing returned so far is flagged
    partial.  The graph is the quasi-tangency graph restricted to its largest
    connected component.
    """
    r_min, r_max = float(radius_range[0]), float(radius_range[1])
    if count < 1 or r_min <= 0 or r_min > r_max:
        raise PackingError("need count >= 1 and 0 < r_min <= r_max")
    rng = np.random.default_rng(seed)
    if box_side is None:
        # size the box for ~30% fill under the log-uniform radius law
        if r_max > r_min:
            exp_rd = (r_max**d - r_min**d) / (d * math.log(r_max / r_min))
        else:
            exp_rd = r_min**d
        vol = count * unit_ball_volume(d, metric) * exp_rd / 0.30
        box_side = max(vol ** (1.0 / d), 2.0 * r_max * (1.0 + _REL_TOL))
    centers: list[np.ndarray] = []
    radii: list[float] = []
    partial = False
    arr_c = np.zeros((0, d))
    arr_r = np.zeros(0)
    for _ in range(count):
        placed = False
        for _ in range(max_tries_per_body):
            r = float(np.exp(rng.uniform(np.log(r_min), np.log(r_max))))
            c = rng.uniform(r, box_side - r, size=d)
            if len(radii):
                gaps = np.abs(arr_c - c)
                dd = np.max(gaps, axis=1) if metric == METRIC_LINF else np.sqrt(np.sum(gaps * gaps, axis=1))
                if np.any(dd < arr_r + r - _REL_TOL * r_max):
                    continue
            centers.append(c)
            radii.append(r)
            arr_c = np.asarray(centers)
            arr_r = np.asarray(radii)
            placed = True
            break
        if not placed:
            partial = True
            break
    packing = SpherePacking(
        d,
        metric,
        tau,
        arr_c,
        arr_r,
        meta={"kind": "rsa", "seed": int(seed), "partial": partial, "requested": count, "box_side": box_side},
    )
    qpg = extract_graph(packing, tau).largest_component()
    return qpg.packing, qpg


_RING_DIRECTIONS = 9  # bodies per ring in the planar accumulation family


def _ring_directions(d: int) -> np.ndarray:
    if d == 2:
        ang = 2.0 * np.pi * np.arange(_RING_DIRECTIONS) / _RING_DIRECTIONS
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    dirs = np.concatenate([np.eye(d), -np.eye(d)], axis=0)
    return dirs


def gen_accumulation(d: int, levels: int):
    """Rings of bodies with radii 2^-j shrinking toward an accumulation point.

    Ring j sits at distance 3*2^-j from the origin; same-direction bodies in
    consecutive rings are exactly tangent, and bodies within a planar ring are
    near-tangent (gap about 2.6% of their diameter).  For d = 1 this is the
    tangent chain with radii 1, 1/2, ..., 2^-levels.
    """
    if d < 1 or levels < 1:
        raise PackingError("need d >= 1 and levels >= 1")
    if d == 1:
        radii = 0.5**np.arange(levels + 1)
        x = np.zeros(levels + 1)
        for j in range(1, levels + 1):
            x[j] = x[j - 1] + radii[j - 1] + radii[j]
        packing = SpherePacking(1, METRIC_L2, 1.0, x[:, None], radii, meta={"kind": "accumulation"})
        edges = np.stack([np.arange(levels), np.arange(1, levels + 1)], axis=1)
        return packing, QuasiPackedGraph(packing, edges, 1.0, 4.0)
    dirs = _ring_directions(d)
    nd = len(dirs)
    centers, radii, edges = [], [], []
    tau = 1.0 if d == 2 else 1.2
    for j in range(levels + 1):
        rho = 0.5**j
        ring = 3.0 * rho * dirs
        base = j * nd
        centers.append(ring)
        radii.append(np.full(nd, rho))
        if d == 2:
            for i in range(nd):
                edges.append((base + i, base + (i + 1) % nd))
        else:
            for a in range(nd):
                for b in range(a + 1, nd):
                    if np.dot(dirs[a], dirs[b]) > -0.5:  # skip antipodal pairs
                        edges.append((base + a, base + b))
        if j > 0:
            for i in range(nd):
                edges.append((base - nd + i, base + i))
    packing = SpherePacking(
        d, METRIC_L2, tau, np.concatenate(centers), np.concatenate(radii), meta={"kind": "accumulation"}
    )
    return packing, QuasiPackedGraph(packing, np.array(edges), tau, 24.0)


def star_leaf_cap(d: int, radius: float) -> int:
    """How many disjoint radius-``radius`` balls tangent to the unit ball fit."""
    half_angle = math.asin(radius / (1.0 + radius))
    if d == 2:
        return max(1, int(math.pi / half_angle))
    # spherical-cap area bound on S^{d-1}
    return max(1, int((2.0 / (1.0 - math.cos(2.0 * half_angle))) ** ((d - 1) / 2.0)))


def gen_star(d: int, leaves: int, leaf_radius: float | None = None):
    """One unit body plus ``leaves`` equal tiny bodies tangent to it.

    Leaves are pairwise disjoint, so the declared graph is the star K_{1,n}.
    If ``leaf_radius`` is omitted a feasible radius is chosen automatically;
    if given, an infeasible count raises an error naming the cap.
    """
    if d < 2 or leaves < 1:
        raise PackingError("need d >= 2 and leaves >= 1")
    if d == 2:
        s = math.sin(math.pi / max(leaves, 2))
        eps_max = s / (1.0 - s) if s < 1.0 else 1.0
        dirs = np.stack(
            [np.cos(2 * np.pi * np.arange(leaves) / leaves), np.sin(2 * np.pi * np.arange(leaves) / leaves)],
            axis=1,
        )
    elif d == 3:
        # Fibonacci sphere; min pairwise angle scales like sqrt(4pi/leaves)
        i = np.arange(leaves, dtype=float)
        phi = math.pi * (3.0 - math.sqrt(5.0)) * i
        z = 1.0 - 2.0 * (i + 0.5) / leaves
        rad = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        dirs = np.stack([rad * np.cos(phi), rad * np.sin(phi), z], axis=1)
        if leaves == 1:
            theta_min = math.pi
        else:
            dots = dirs @ dirs.T
            np.fill_diagonal(dots, -1.0)
            theta_min = math.acos(min(1.0, max(-1.0, float(dots.max()))))
        s = math.sin(theta_min / 2.0)
        eps_max = s / (1.0 - s) if s < 1.0 else 1.0
    else:
        if leaves > 2 * d:
            raise PackingError(f"gen_star in d={d} supports at most {2 * d} leaves (cap)")
        dirs = np.concatenate([np.eye(d), -np.eye(d)], axis=0)[:leaves]
        eps_max = 1.0
    if leaf_radius is None:
        eps = min(0.1, 0.5 * eps_max)
    else:
        eps = float(leaf_radius)
        if eps > eps_max * (1.0 + _REL_TOL):
            cap = star_leaf_cap(d, eps)
            raise PackingError(
                f"{leaves} leaves of radius {eps} do not fit around the unit body; cap is {cap}"
            )
    centers = np.concatenate([np.zeros((1, d)), (1.0 + eps) * dirs], axis=0)
    radii = np.concatenate([[1.0], np.full(leaves, eps)])
    packing = SpherePacking(d, METRIC_L2, 1.0, centers, radii, meta={"kind": "star", "leaf_radius": eps})
    edges = np.stack([np.zeros(leaves, dtype=np.int64), np.arange(1, leaves + 1)], axis=1)
    return packing, QuasiPackedGraph(packing, edges, 1.0, 4.0)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    edges_checked: int
    tangency_violations: int
    point_multiplicity_max: int
    sampled_quasi_multiplicity_max: int
    radii_sampled: int = 0
    notes: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "edges_checked": self.edges_checked,
            "tangency_violations": self.tangency_violations,
            "point_multiplicity_max": self.point_multiplicity_max,
            "sampled_quasi_multiplicity_max": self.sampled_quasi_multiplicity_max,
            "radii_sampled": self.radii_sampled,
            "notes": self.notes,
        }


def _pairwise_center_dists(packing: SpherePacking, pts: np.ndarray) -> np.ndarray:
    diff = np.abs(pts[:, None, :] - packing.centers[None, :, :])
    if packing.metric == METRIC_LINF:
        return np.max(diff, axis=2)
    return np.sqrt(np.sum(diff * diff, axis=2))


def validate(qpg: QuasiPackedGraph, max_radii: int = 128) -> ValidationReport:
    """Exact per-edge tangency check plus multiplicity probes.

    Raises PackingValidationError on the first batch of tangency violations.
    Point multiplicity is evaluated at every body center and at a witness
    point of every intersecting pair; the quasi-multiplicity condition is
    probed at all centers against the set of body-diameter radii (quantile
    thinned beyond ``max_radii`` values).
    """
    p = qpg.packing
    n = len(p)
    r = p.radii
    tol = _REL_TOL * max(1.0, float(r.max()))
    # (a) every edge is quasi-tangent
    violations = []
    for u, v in qpg.edges:
        gap = p.body_dist(int(u), int(v))
        if gap > qpg.tau * 2.0 * min(r[u], r[v]) + tol:
            violations.append((int(u), int(v), gap))
    if violations:
        u, v, gap = violations[0]
        raise PackingValidationError(
            f"{len(violations)} edge(s) violate quasi-tangency; first is ({u},{v}) with gap {gap:.6g}"
        )
    # (b) point multiplicity at centers and pair witnesses
    witnesses = [p.centers]
    pairs = _candidate_pairs(p, float(2.0 * r.max() + tol))
    touching = []
    for u, v in pairs:
        cd = p.center_dist(int(u), int(v))
        if cd <= r[u] + r[v] + tol:
            touching.append((int(u), int(v), cd))
    if touching:
        w = []
        for u, v, cd in touching:
            if cd == 0.0:
                w.append(p.centers[u])
                continue
            t = 0.5 * (cd + r[u] - r[v])
            t = min(max(t, max(0.0, cd - r[v])), min(r[u], cd))
            w.append(p.centers[u] + (p.centers[v] - p.centers[u]) * (t / cd))
        witnesses.append(np.asarray(w))
    pts = np.concatenate(witnesses, axis=0)
    pt_mult = 0
    for chunk in np.array_split(pts, max(1, len(pts) // 512)):
        dd = _pairwise_center_dists(p, chunk)
        pt_mult = max(pt_mult, int(np.max(np.sum(dd <= r[None, :] + tol, axis=1))))
    # (c) sampled bounded-multiplicity probe
    radii_set = np.unique(p.diameters / qpg.tau)
    if len(radii_set) > max_radii:
        qs = np.linspace(0.0, 1.0, max_radii)
        radii_set = np.unique(np.quantile(radii_set, qs))
    qmax = 0
    for chunk in np.array_split(np.arange(n), max(1, n // 256)):
        dd = _pairwise_center_dists(p, p.centers[chunk])  # (chunk, n)
        for rr in radii_set:
            meets = dd - r[None, :] <= rr + tol
            big = p.diameters[None, :] >= qpg.tau * rr - tol
            qmax = max(qmax, int(np.max(np.sum(meets & big, axis=1))))
    return ValidationReport(
        edges_checked=qpg.n_edges,
        tangency_violations=0,
        point_multiplicity_max=pt_mult,
        sampled_quasi_multiplicity_max=qmax,
        radii_sampled=len(radii_set),
        notes={"declared_tau": qpg.tau, "declared_multiplicity": qpg.multiplicity},
    )
