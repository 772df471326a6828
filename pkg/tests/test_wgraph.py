"""Weighted path metric and growth profile tests."""

import numpy as np
import pytest
from scipy import sparse

from confpack.packing import gen_grid, gen_rsa
from confpack.wgraph import (
    MetricError,
    WeightedGraphMetric,
    default_radii,
    growth_profile,
    sample_roots,
)


def adj_from_edges(n, edges):
    edges = np.asarray(edges)
    data = np.ones(2 * len(edges))
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


def path_metric(n, omega=None):
    edges = [(i, i + 1) for i in range(n - 1)]
    om = np.ones(n) if omega is None else np.asarray(omega, dtype=float)
    return WeightedGraphMetric(adj_from_edges(n, edges), om)


def test_dist_hand_cases():
    m = path_metric(3)
    assert m.dist(0)[2] == 2.0
    m = path_metric(2, [1.0, 3.0])
    assert m.dist(0)[1] == 2.0
    tri = WeightedGraphMetric(adj_from_edges(3, [(0, 1), (1, 2), (0, 2)]), np.array([1.0, 100.0, 1.0]))
    assert tri.dist(0)[2] == 1.0  # direct edge beats the heavy detour


def test_dist_disconnected_inf():
    m = WeightedGraphMetric(adj_from_edges(3, [(0, 1)]), np.ones(3))
    assert np.isinf(m.dist(0)[2])
    assert m.diameter() == np.inf


def test_ball_cases():
    m = path_metric(8)
    assert list(m.ball(3, 0.0)) == [3]
    assert len(m.ball(3, 2.0)) == 5
    _, g = gen_grid(2, 9)
    gm = WeightedGraphMetric(g.adjacency(), np.ones(g.n_vertices))
    for r in (1.0, 2.0, 3.0):
        assert all(len(gm.ball(x, r)) <= (2 * r + 1) ** 2 for x in (0, 40))


def test_ball_matches_dist_threshold():
    rng = np.random.default_rng(2)
    _, g = gen_rsa(2, 80, (0.2, 1.0), seed=9)
    m = WeightedGraphMetric(g.adjacency(), rng.uniform(0.1, 2.0, g.n_vertices))
    d = m.dist(0)
    assert np.array_equal(m.ball(0, 1.7), np.flatnonzero(d <= 1.7))


def test_subset_diam():
    m = path_metric(6)
    assert m.subset_diam([0, 5]) == 5.0
    assert m.subset_diam([2]) == 0.0
    with pytest.raises(MetricError):
        m.subset_diam([])


def test_metric_axioms_sampled():
    rng = np.random.default_rng(4)
    _, g = gen_rsa(2, 120, (0.2, 1.0), seed=21)
    om = rng.uniform(0.0, 3.0, g.n_vertices)
    m = WeightedGraphMetric(g.adjacency(), om)
    n = g.n_vertices
    dd = m.dist_many(np.arange(n))
    assert np.allclose(dd, dd.T)
    assert np.all(np.diag(dd) == 0.0)
    for _ in range(2000):
        x, y, z = rng.integers(0, n, size=3)
        assert dd[x, z] <= dd[x, y] + dd[y, z] + 1e-12


def test_edge_lengths_halved_sum():
    m = path_metric(4, [1.0, 2.0, 4.0, 8.0])
    assert np.allclose(sorted(m.edge_lengths()), [1.5, 3.0, 6.0])


def test_default_radii_cover():
    r = default_radii(37.0)
    assert r[0] == 1.0 and r[-1] == 37.0
    assert np.all(np.diff(r) > 0)


def test_growth_profile_monotone_and_consistent():
    _, g = gen_grid(2, 12)
    m = WeightedGraphMetric(g.adjacency(), np.ones(g.n_vertices))
    rep = growth_profile(m, d_star=2)
    balls = [e["max_ball"] for e in rep.entries]
    assert balls == sorted(balls)
    assert rep.entries[-1]["max_ball"] == g.n_vertices
    e = rep.entries[2]
    assert e["const_poly"] == pytest.approx(e["max_ball"] / e["R"] ** 2)
    assert e["const_polylog"] == pytest.approx(e["const_poly"] / np.log(2 + e["R"]) ** 2)


def test_growth_profile_explicit_radii_and_roots():
    _, g = gen_grid(1, 30)
    m = WeightedGraphMetric(g.adjacency(), np.ones(g.n_vertices))
    rep = growth_profile(m, d_star=2, radii=[2.0, 5.0], roots=[15])
    assert rep.ball_at(2.0) == 5
    assert rep.ball_at(5.0) == 11
    assert rep.roots_sampled == [15]


def test_sample_roots_small_graph_is_everything():
    _, g = gen_grid(2, 5)
    m = WeightedGraphMetric(g.adjacency(), np.ones(25))
    assert len(sample_roots(m, m.omega)) == 25


def test_subset_diam_uses_outside_shortcuts():
    # cycle: the subset {0, 3} can route both ways; diameter is min route
    edges = [(i, (i + 1) % 6) for i in range(6)]
    m = WeightedGraphMetric(adj_from_edges(6, edges), np.ones(6))
    assert m.subset_diam([0, 3]) == 3.0
