"""Shared construction helpers for the test suite."""

import numpy as np

from canet.clca import Clca, StructureMatrix
from canet.measures import GaussianMeasure, random_stiefel
from canet.network import CanEdge, CanNode, CanSpec


def random_partition(d_fine, d_coarse, rng) -> StructureMatrix:
    entries = np.zeros((d_fine, d_coarse))
    perm = rng.permutation(d_fine)
    for c in range(d_coarse):
        entries[perm[c], c] = 1.0
    for r in perm[d_coarse:]:
        entries[r, rng.integers(d_coarse)] = 1.0
    return StructureMatrix(entries)


def random_clca(d_fine, d_coarse, rng) -> Clca:
    b = random_partition(d_fine, d_coarse, rng)
    return Clca(b, random_stiefel(d_fine, d_coarse, mask=b.entries, rng=rng))


def random_pd(dim, rng) -> GaussianMeasure:
    g = rng.standard_normal((dim, dim))
    return GaussianMeasure(g @ g.T + 1e-3 * np.eye(dim))


def build_can(dims, edge_pairs, rng, measures=None) -> CanSpec:
    """Nodes get ids 1..N (dims must already be descending); ``edge_pairs``
    holds (fine_id, coarse_id) tuples."""
    dim_of = {i + 1: d for i, d in enumerate(dims)}
    nodes = tuple(
        CanNode(i + 1, d, None if measures is None else measures.get(i + 1))
        for i, d in enumerate(dims)
    )
    edges = tuple(
        CanEdge(f, c, random_clca(dim_of[f], dim_of[c], rng)) for f, c in edge_pairs
    )
    return CanSpec(nodes, edges)


def fork_topology(rng, dims=None) -> CanSpec:
    """Four models where the second abstracts the first and both remaining
    coarse models abstract the second: edges (1,2), (2,3), (2,4).

    Node 3 cannot be reached from node 4 along the coarse-to-fine
    orientation, so the structure admits no global section.
    """
    if dims is None:
        dims = (6, 4, 3, 2)
    return build_can(dims, [(1, 2), (2, 3), (2, 4)], rng)


def chain_can(dims, rng) -> CanSpec:
    pairs = [(i + 1, i + 2) for i in range(len(dims) - 1)]
    return build_can(dims, pairs, rng)


def random_tree_can(n, rng, dim_lo=2, dim_hi=12) -> CanSpec:
    """Random parent tree rooted at the coarsest node; every node reachable."""
    dims = np.sort(rng.integers(dim_lo, dim_hi + 1, size=n))[::-1]
    pairs = [(i + 1, int(rng.integers(i + 1, n)) + 1) for i in range(n - 1)]
    return build_can(tuple(int(d) for d in dims), pairs, rng)
