"""Small adjacency-matrix builders used by the CLI and tests."""

from __future__ import annotations

import numpy as np
from scipy import sparse


def adjacency_from_edges(n: int, edges) -> sparse.csr_matrix:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    data = np.ones(2 * len(edges))
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


def path_adjacency(n: int) -> sparse.csr_matrix:
    return adjacency_from_edges(n, [(i, i + 1) for i in range(n - 1)])


def cycle_adjacency(n: int) -> sparse.csr_matrix:
    return adjacency_from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def complete_adjacency(n: int) -> sparse.csr_matrix:
    iu, iv = np.triu_indices(n, k=1)
    return adjacency_from_edges(n, np.stack([iu, iv], axis=1))


def grid_adjacency(d: int, m: int, periodic: bool = False) -> sparse.csr_matrix:
    idx = np.arange(m**d).reshape([m] * d)
    edges = []
    for axis in range(d):
        a = np.take(idx, np.arange(m - 1), axis=axis).ravel()
        b = np.take(idx, np.arange(1, m), axis=axis).ravel()
        edges.append(np.stack([a, b], axis=1))
        if periodic and m > 2:
            a = np.take(idx, [m - 1], axis=axis).ravel()
            b = np.take(idx, [0], axis=axis).ravel()
            edges.append(np.stack([a, b], axis=1))
    return adjacency_from_edges(m**d, np.concatenate(edges))
