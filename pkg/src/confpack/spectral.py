"""Random-walk spectrum, Weyl-type bounds, disjoint bumps, heat kernels.

Eigenvalues are those of I - P for the random walk transition operator P,
computed through the symmetric normalization D^{-1/2} A D^{-1/2}; they live
in [0, 2] with one zero per connected component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .wgraph import WeightedGraphMetric

DENSE_SOLVE_CAP = 4096


class SpectralError(ValueError):
    pass


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray  # ascending, lambda_0 = 0
    degrees: np.ndarray
    weyl: dict = field(default_factory=dict)
    bumps: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    def counting(self, lam: float) -> int:
        """N(lam) = #{k >= 1 : lambda_k <= lam}."""
        return int(np.searchsorted(self.eigenvalues, lam, side="right")) - 1

    def degree_profile(self, k: int) -> int:
        """Largest possible degree sum over k vertices."""
        if not 0 <= k <= self.n:
            raise SpectralError("k out of range")
        srt = np.sort(self.degrees)[::-1]
        return int(np.sum(srt[:k]))

    def to_json_obj(self) -> dict:
        return {
            "n": self.n,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "degrees": [int(v) for v in self.degrees],
            "weyl": self.weyl,
            "bumps": self.bumps,
        }


def spectrum(adjacency: sparse.spmatrix, cap: int = DENSE_SOLVE_CAP) -> SpectrumReport:
    """Full spectrum of I - P via a dense symmetric eigensolve."""
    adj = sparse.csr_matrix(adjacency)
    n = adj.shape[0]
    if n > cap:
        raise SpectralError(
            f"{n} vertices exceeds the dense-solve cap {cap}; use the heat-kernel path"
        )
    deg = np.asarray(adj.sum(axis=1)).ravel()
    if np.any(deg == 0):
        raise SpectralError("isolated vertices have no random-walk operator")
    dinv = 1.0 / np.sqrt(deg)
    norm = adj.multiply(dinv[:, None]).multiply(dinv[None, :]).toarray()
    eigs = np.linalg.eigvalsh(norm)
    lam = np.sort(1.0 - eigs)
    lam[0] = max(lam[0], 0.0) if abs(lam[0]) < 1e-9 else lam[0]
    trace = float(np.sum(lam))
    if abs(trace - n) > 1e-8 * max(1.0, n):
        raise SpectralError(f"trace identity violated: sum lambda = {trace} != {n}")
    return SpectrumReport(eigenvalues=lam, degrees=deg.astype(np.int64))


def weyl_check(report: SpectrumReport, d: int) -> dict:
    """Empirical constants for the eigenvalue growth bound.

    Records C_emp = max_k lambda_k / [(Delta(k)/k) log(e n/k)^2 (k/n)^(2/d)]
    and the converse tightness constant c_emp = min_k lambda_k / (k/n)^(2/d),
    plus the counting-function display constants under both parsings of the
    stacked-n right-hand side.
    """
    lam = report.eigenvalues
    n = report.n
    srt = np.sort(report.degrees)[::-1]
    prof = np.cumsum(srt)  # degree_profile(k) = prof[k-1]
    ks = np.arange(1, n)
    expr = (prof[ks - 1] / ks) * np.log(math.e * n / ks) ** 2 * (ks / n) ** (2.0 / d)
    ratios = lam[ks] / expr
    c_low = lam[ks] / (ks / n) ** (2.0 / d)
    # counting display, evaluated at each positive eigenvalue <= 1
    printed, single_n = [], []
    for lv in np.unique(lam[ks]):
        if lv <= 0 or lv > 1.0:
            continue
        nn = report.counting(lv)
        kk = max(1, min(n, int(math.floor(lv * n))))
        dd = prof[kk - 1]
        log2 = math.log(math.e / lv) ** 2
        printed.append(nn * dd * log2 / (lv * n * n * lv ** (d / 2.0)))
        single_n.append(nn * dd * log2 / (lv * n * lv ** (d / 2.0)))
    out = {
        "d": d,
        "C_emp": float(np.max(ratios)),
        "c_emp": float(np.min(c_low)),
        "argmax_k": int(ks[np.argmax(ratios)]),
        "counting_const_printed": float(min(printed)) if printed else None,
        "counting_const_single_n": float(min(single_n)) if single_n else None,
        "per_k": [
            {"k": int(k), "lambda": float(lam[k]), "ratio": float(r)}
            for k, r in zip(ks, ratios)
        ],
    }
    report.weyl = {key: val for key, val in out.items() if key != "per_k"}
    return out


def rayleigh_quotient(adjacency: sparse.spmatrix, f: np.ndarray) -> float:
    adj = sparse.csr_matrix(adjacency)
    coo = sparse.triu(adj, k=1).tocoo()
    f = np.asarray(f, dtype=float)
    num = float(np.sum((f[coo.row] - f[coo.col]) ** 2))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    den = float(np.sum(deg * f * f))
    if den == 0.0:
        raise SpectralError("zero function has no Rayleigh quotient")
    return num / den


@dataclass
class BumpReport:
    radius: float
    ball_cap: float
    supports: list
    values: list
    rayleigh: list

    @property
    def count(self) -> int:
        return len(self.supports)

    @property
    def max_rayleigh(self) -> float:
        return max(self.rayleigh)

    def summary(self) -> dict:
        return {
            "R": self.radius,
            "K": self.ball_cap,
            "count": self.count,
            "max_rayleigh": self.max_rayleigh,
        }


def ball_carving_bumps(metric: WeightedGraphMetric, radius: float, ball_cap: float) -> BumpReport:
    """Greedy carving into disjointly supported tent functions.

    Pick an uncarved vertex x, keep the tent max(0, 1 - 4 dist(x, .)/R)
    supported inside the open R/4-ball, carve away the closed R/2-ball, and
    repeat.  Later centers are > R/2 from earlier ones, so supports are
    pairwise disjoint; as long as every R-ball holds at most ``ball_cap``
    vertices, at least n/(2 ball_cap) tents are produced.
    """
    n = metric.n_vertices
    adj = (metric.graph != 0).astype(float)
    deg = np.asarray(adj.sum(axis=1)).ravel()
    edges_u, edges_v = metric.edges[:, 0], metric.edges[:, 1]
    lens = metric.edge_lengths()
    uncarved = np.ones(n, dtype=bool)
    supports, values, quotients = [], [], []
    while np.any(uncarved):
        x = int(np.argmax(uncarved))
        dist = metric.dist(x)
        tent = np.maximum(0.0, 1.0 - 4.0 * dist / radius)
        supp = np.flatnonzero(tent > 0)
        f = tent[supp]
        num = float(np.sum((tent[edges_u] - tent[edges_v]) ** 2))
        den = float(np.sum(deg[supp] * f * f))
        rq = num / den
        # Lipschitz sanity: the tent is (4/R)-Lipschitz in the path metric
        touch = (tent[edges_u] > 0) | (tent[edges_v] > 0)
        cap = (16.0 / radius**2) * float(np.sum(lens[touch] ** 2)) / den
        if rq > cap * (1.0 + 1e-9):
            raise SpectralError("tent exceeded its Lipschitz energy cap; metric inconsistent")
        supports.append(supp)
        values.append(f)
        quotients.append(rq)
        uncarved &= ~(dist <= radius / 2.0)
    return BumpReport(radius, ball_cap, supports, values, quotients)


@dataclass
class HeatSeries:
    times: np.ndarray  # t values; probabilities are for 2t steps
    probs: np.ndarray
    stderr: np.ndarray
    method: str

    def to_rows(self):
        return list(zip(self.times.tolist(), self.probs.tolist(), self.stderr.tolist()))


def heat_kernel(
    adjacency: sparse.spmatrix,
    x: int,
    horizon: int,
    method: str = "auto",
    walks: int = 20000,
    seed: int | None = None,
    workers: int = 8,
    cap: int = DENSE_SOLVE_CAP,
) -> HeatSeries:
    """Return probabilities p_{2t}(x, x) for t = 1..horizon.

    Exact values come from the eigendecomposition of the normalized
    adjacency; the Monte Carlo path simulates seeded walk streams that merge
    deterministically.
    """
    if horizon < 1:
        raise SpectralError("horizon must be >= 1")
    adj = sparse.csr_matrix(adjacency)
    n = adj.shape[0]
    if method == "auto":
        method = "exact" if n <= cap else "mc"
    if method == "exact":
        if n > cap:
            raise SpectralError(f"{n} vertices exceeds the dense cap {cap}; use method='mc'")
        deg = np.asarray(adj.sum(axis=1)).ravel()
        if np.any(deg == 0):
            raise SpectralError("isolated vertices have no random walk")
        dinv = 1.0 / np.sqrt(deg)
        norm = adj.multiply(dinv[:, None]).multiply(dinv[None, :]).toarray()
        theta, vecs = np.linalg.eigh(norm)
        amp = vecs[x] ** 2
        ts = np.arange(1, horizon + 1)
        probs = np.array([float(np.sum(theta ** (2 * t) * amp)) for t in ts])
        return HeatSeries(ts, probs, np.zeros(horizon), "exact")
    if method != "mc":
        raise SpectralError(f"unknown method {method!r}")
    if seed is None:
        raise SpectralError("Monte Carlo heat kernel requires a seed")
    deg = np.diff(adj.indptr)
    if np.any(deg == 0):
        raise SpectralError("isolated vertices have no random walk")
    hits = np.zeros(horizon, dtype=np.int64)
    chunks = np.full(workers, walks // workers)
    chunks[: walks % workers] += 1
    for ss, size in zip(np.random.SeedSequence(seed).spawn(workers), chunks):
        if size == 0:
            continue
        rng = np.random.default_rng(ss)
        pos = np.full(size, x, dtype=np.int64)
        for step in range(1, 2 * horizon + 1):
            r = rng.integers(0, deg[pos])
            pos = adj.indices[adj.indptr[pos] + r]
            if step % 2 == 0:
                hits[step // 2 - 1] += int(np.sum(pos == x))
    probs = hits / walks
    stderr = np.sqrt(np.maximum(probs * (1.0 - probs), 0.0) / walks)
    return HeatSeries(np.arange(1, horizon + 1), probs, stderr, "mc")


@dataclass
class DimensionFit:
    dimension: float
    t_used: np.ndarray
    excluded: list

    def to_json_obj(self) -> dict:
        return {
            "dimension": self.dimension,
            "t_min": int(self.t_used.min()),
            "t_max": int(self.t_used.max()),
            "excluded": self.excluded,
        }


def spectral_dim_fit(series: HeatSeries, window: tuple[int, int]) -> DimensionFit:
    """Least-squares slope of -2 log p_{2t} against log t over a time window.

    Times with zero Monte Carlo hits carry no information and are excluded
    (and flagged).
    """
    lo, hi = window
    mask = (series.times >= lo) & (series.times <= hi)
    excluded = [int(t) for t in series.times[mask & (series.probs <= 0.0)]]
    mask &= series.probs > 0.0
    ts = series.times[mask]
    if len(ts) < 2:
        raise SpectralError("need at least two usable times in the window")
    xs = np.log(ts.astype(float))
    ys = -2.0 * np.log(series.probs[mask])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return DimensionFit(slope, ts, excluded)
