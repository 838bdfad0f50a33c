"""Synthetic instance generation for the two benchmark suites.

Local instances plant a hidden masked-Stiefel map between a random
full-rank fine covariance and its abstraction. Network instances build a
chain, star, or tree of abstractions over nodes with random dimensions,
derive every implied (closure) map by composition so redundant paths stay
exactly compatible, and propagate one random coarse covariance into a
global section.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .clca import Clca, StructureMatrix, compose_clca, validate_clca
from .diffusion import ZeroCochain, is_fixed_point
from .errors import ValidationError
from .measures import GaussianMeasure, pushforward_gaussian, random_stiefel
from .network import CanEdge, CanNode, CanSpec, generate_global_section, smoothness
from .search import transitive_closure

TOPOLOGIES = ("chain", "star", "tree")

# Ten-node tree used when the topology is "tree" and n == 10; pairs are
# (fine position, coarse position), root at the coarsest node 9.
FIXED_TREE_10 = ((0, 2), (1, 2), (2, 5), (3, 5), (4, 7), (5, 9), (6, 7), (7, 9), (8, 9))


def random_pd_cov(dim: int, rng, ridge: float = 1e-3) -> np.ndarray:
    """Gram matrix of a square standard-normal factor plus a small ridge."""
    g = rng.standard_normal((dim, dim))
    return g @ g.T + ridge * np.eye(dim)


def random_structure(
    d_fine: int, d_coarse: int, rng, method: str = "inject"
) -> StructureMatrix:
    """Random surjective block assignment.

    ``inject`` anchors one distinct fine variable per block and assigns the
    rest uniformly (always succeeds). ``resample`` draws every assignment
    uniformly and retries until surjective, which matches the local-suite
    recipe but is only practical when ``d_coarse`` is small.
    """
    if d_fine < d_coarse or d_coarse < 1:
        raise ValidationError(f"need d_fine >= d_coarse >= 1, got ({d_fine}, {d_coarse})")
    entries = np.zeros((d_fine, d_coarse))
    if method == "inject":
        perm = rng.permutation(d_fine)
        for c in range(d_coarse):
            entries[perm[c], c] = 1.0
        for r in perm[d_coarse:]:
            entries[int(r), int(rng.integers(d_coarse))] = 1.0
    elif method == "resample":
        for _ in range(100_000):
            assignment = rng.integers(0, d_coarse, size=d_fine)
            if np.unique(assignment).size == d_coarse:
                entries[:] = 0.0
                entries[np.arange(d_fine), assignment] = 1.0
                break
        else:  # pragma: no cover - astronomically unlikely for suite shapes
            raise ValidationError("failed to draw a surjective assignment")
    else:
        raise ValidationError(f"unknown structure sampling method {method!r}")
    return StructureMatrix(entries)


def random_clca(d_fine: int, d_coarse: int, rng, method: str = "inject") -> Clca:
    b = random_structure(d_fine, d_coarse, rng, method)
    return Clca(b, random_stiefel(d_fine, d_coarse, mask=b.entries, rng=rng))


@dataclass(frozen=True)
class LocalInstance:
    sigma_l: GaussianMeasure
    sigma_h: GaussianMeasure
    truth: Clca


def gen_local_instance(ell: int, h: int, rng=None) -> LocalInstance:
    """Plant a hidden abstraction: random block structure (uniform
    assignments, resampled until surjective), a masked orthonormal map, a
    random full-rank fine covariance, and the induced coarse covariance."""
    if not ell > h >= 1:
        raise ValidationError(f"need ell > h >= 1, got ({ell}, {h})")
    rng = np.random.default_rng(rng)
    truth = random_clca(ell, h, rng, method="resample")
    sigma_l = GaussianMeasure(random_pd_cov(ell, rng))
    sigma_h = pushforward_gaussian(truth.abstraction, sigma_l)
    return LocalInstance(sigma_l, sigma_h, truth)


def topology_pairs(topology: str, n: int, rng=None) -> tuple[tuple[int, int], ...]:
    """Irreducible relation pairs (fine position, coarse position) for the
    requested shape over positions 0..n-1 sorted fine to coarse.

    The chain links consecutive positions, the star hangs every node off the
    coarsest one, and the tree assigns each node a random coarser parent
    (the fixed ten-node tree when n == 10).
    """
    if n < 2:
        raise ValidationError("need at least two nodes")
    if topology == "chain":
        return tuple((c, c + 1) for c in range(n - 1))
    if topology == "star":
        return tuple((c, n - 1) for c in range(n - 1))
    if topology == "tree":
        if n == 10:
            return FIXED_TREE_10
        rng = np.random.default_rng(rng)
        return tuple((c, int(rng.integers(c + 1, n))) for c in range(n - 1))
    raise ValidationError(f"unknown topology {topology!r}; expected one of {TOPOLOGIES}")


@dataclass(frozen=True)
class CanInstance:
    """Ground-truth network with a global section attached to its nodes.

    ``structures`` holds one block structure per strictly-lower pair keyed by
    (fine position, coarse position): composed ones on closure pairs, random
    ones elsewhere (the searcher needs some declared structure for every
    candidate it may try). ``truth_maps`` carries the planted maps for all
    closure pairs.
    """

    topology: str
    can: CanSpec
    section: dict[int, GaussianMeasure]
    truth_closure: np.ndarray
    structures: dict[tuple[int, int], StructureMatrix]
    truth_maps: dict[tuple[int, int], Clca]


def gen_can_instance(
    topology: str,
    n: int,
    dim_lo: int,
    dim_hi: int,
    rng=None,
    check: bool = True,
) -> CanInstance:
    """Build one ground-truth network instance carrying a global section.

    Dimensions are drawn uniformly in [dim_lo, dim_hi] and sorted so node 1
    is the finest and node n the coarsest (redrawn if all equal). Reduction
    edges get random structures and masked orthonormal maps; closure pairs
    are composed from them. With ``check`` on, the instance is verified to
    be consistent, section-supporting, fixed under the diffusion operator,
    and smooth before it is returned.
    """
    if dim_lo < 2 or dim_hi < dim_lo:
        raise ValidationError(f"bad dimension range [{dim_lo}, {dim_hi}]")
    rng = np.random.default_rng(rng)
    for _ in range(100):
        dims = np.sort(rng.integers(dim_lo, dim_hi + 1, size=n))[::-1].astype(int)
        if dims[0] > dims[-1]:
            break
    else:
        raise ValidationError("could not draw non-constant dimensions")

    pairs = topology_pairs(topology, n, rng)
    parent = {c: r for c, r in pairs}

    edge_maps: dict[tuple[int, int], Clca] = {}
    for c, r in pairs:
        edge_maps[(c, r)] = random_clca(int(dims[c]), int(dims[r]), rng)

    # Closure pairs: compose up the parent chain, reusing shorter prefixes.
    truth_maps: dict[tuple[int, int], Clca] = dict(edge_maps)
    reduction = np.zeros((n, n), dtype=bool)
    for c, r in pairs:
        reduction[r, c] = True
    closure = transitive_closure(reduction)
    for c in range(n):
        anc = parent.get(c)
        while anc is not None:
            nxt = parent.get(anc)
            if nxt is not None and (c, nxt) not in truth_maps:
                truth_maps[(c, nxt)] = compose_clca(truth_maps[(c, anc)], edge_maps[(anc, nxt)])
            anc = nxt

    structures: dict[tuple[int, int], StructureMatrix] = {}
    for c in range(n):
        for r in range(c + 1, n):
            if closure[r, c]:
                structures[(c, r)] = truth_maps[(c, r)].structure
            else:
                structures[(c, r)] = random_structure(int(dims[c]), int(dims[r]), rng)

    nodes = tuple(CanNode(i + 1, int(dims[i])) for i in range(n))
    edges = tuple(CanEdge(c + 1, r + 1, edge_maps[(c, r)]) for c, r in pairs)
    can = CanSpec(nodes, edges)
    coarse = GaussianMeasure(random_pd_cov(int(dims[-1]), rng))
    section = generate_global_section(can, coarse)
    can = can.with_measures(section)

    if check:
        _assert_instance(can, section, truth_maps)
    return CanInstance(topology, can, section, closure, structures, truth_maps)


def _assert_instance(can: CanSpec, section, truth_maps) -> None:
    for key, clca in truth_maps.items():
        report = validate_clca(clca)
        if not report.valid:
            raise ValidationError(f"planted map {key} invalid: {report.messages}")
    fp = is_fixed_point(can, ZeroCochain.from_gaussians(section), tol=1e-9)
    if not fp.fixed:
        raise ValidationError(f"generated section is not a fixed point: {fp.deviations}")
    sm = smoothness(can, section)
    if not sm.total <= 1e-8:
        raise ValidationError(f"generated section is not smooth: {sm.total}")
