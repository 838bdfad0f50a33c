"""The causal abstraction network: nodes holding Gaussian measures, oriented
edges carrying embedding/abstraction maps, and the induced block algebra.

Edges point from a coarse node into a finer one (the embedding direction);
each stores one CLCA whose weight matrix V embeds coarse into fine and whose
transpose abstracts back. Nodes are kept sorted by decreasing dimension with
ties broken by ascending id, so the coarsest model is always last.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .clca import Clca
from .errors import (
    DimensionMismatchError,
    InternalConsistencyError,
    MultiPathError,
    TopologyError,
    ValidationError,
)
from .measures import (
    GaussianMeasure,
    kl_gaussian_abstracted,
    pushforward_gaussian,
    stiefel_deviation,
    symmetrize,
)

EdgeKey = tuple[int, int]  # (fine node id, coarse node id)


@dataclass(frozen=True)
class CanNode:
    id: int
    dim: int
    measure: GaussianMeasure | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError(f"node {self.id}: dimension must be positive")
        if self.measure is not None and self.measure.dim != self.dim:
            raise DimensionMismatchError(
                f"node {self.id}: measure dimension {self.measure.dim} != {self.dim}"
            )


@dataclass(frozen=True)
class CanEdge:
    fine: int
    coarse: int
    clca: Clca

    @property
    def key(self) -> EdgeKey:
        return (self.fine, self.coarse)


@dataclass(frozen=True)
class CanSpec:
    """Immutable network of Gaussian models joined by abstraction edges."""

    nodes: tuple[CanNode, ...]
    edges: tuple[CanEdge, ...] = ()

    def __post_init__(self):
        nodes = tuple(sorted(self.nodes, key=lambda n: (-n.dim, n.id)))
        object.__setattr__(self, "nodes", nodes)
        ids = [n.id for n in nodes]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate node ids")
        dims = {n.id: n.dim for n in nodes}
        seen_pairs = set()
        for e in self.edges:
            if e.fine not in dims or e.coarse not in dims:
                raise ValidationError(f"edge {e.key} references unknown node")
            if e.fine == e.coarse:
                raise ValidationError(f"self-loop at node {e.fine}")
            if dims[e.fine] < dims[e.coarse]:
                raise ValidationError(
                    f"edge {e.key}: fine endpoint has smaller dimension "
                    f"({dims[e.fine]} < {dims[e.coarse]})"
                )
            if e.clca.structure.shape != (dims[e.fine], dims[e.coarse]):
                raise DimensionMismatchError(
                    f"edge {e.key}: map shape {e.clca.structure.shape} != "
                    f"({dims[e.fine]}, {dims[e.coarse]})"
                )
            pair = frozenset(e.key)
            if pair in seen_pairs:
                raise ValidationError(f"duplicate edge between {set(pair)}")
            seen_pairs.add(pair)
        object.__setattr__(self, "edges", tuple(self.edges))

    # -- lookups -----------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def node_ids(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.nodes)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(n.dim for n in self.nodes)

    def index(self, node_id: int) -> int:
        for i, n in enumerate(self.nodes):
            if n.id == node_id:
                return i
        raise KeyError(node_id)

    def node(self, node_id: int) -> CanNode:
        return self.nodes[self.index(node_id)]

    def dim_of(self, node_id: int) -> int:
        return self.node(node_id).dim

    @property
    def coarsest_id(self) -> int:
        return self.nodes[-1].id

    def edge(self, key: EdgeKey) -> CanEdge:
        for e in self.edges:
            if e.key == key:
                return e
        raise KeyError(key)

    def incident_edges(self, node_id: int) -> tuple[CanEdge, ...]:
        return tuple(e for e in self.edges if node_id in e.key)

    def measures(self) -> dict[int, GaussianMeasure]:
        out = {}
        for n in self.nodes:
            if n.measure is None:
                raise ValidationError(f"node {n.id} carries no measure")
            out[n.id] = n.measure
        return out

    def with_measures(self, measures: Mapping[int, GaussianMeasure]) -> "CanSpec":
        nodes = tuple(
            CanNode(n.id, n.dim, measures.get(n.id, n.measure)) for n in self.nodes
        )
        return CanSpec(nodes, self.edges)

    # -- topology ----------------------------------------------------------

    def components(self) -> list[tuple[int, ...]]:
        """Connected components (undirected), each as a tuple of node ids in
        the global node order."""
        adj: dict[int, set[int]] = {n.id: set() for n in self.nodes}
        for e in self.edges:
            adj[e.fine].add(e.coarse)
            adj[e.coarse].add(e.fine)
        seen: set[int] = set()
        comps = []
        for n in self.nodes:
            if n.id in seen:
                continue
            comp = []
            queue = deque([n.id])
            seen.add(n.id)
            while queue:
                u = queue.popleft()
                comp.append(u)
                for v in adj[u]:
                    if v not in seen:
                        seen.add(v)
                        queue.append(v)
            comps.append(tuple(sorted(comp, key=self.index)))
        return comps

    def is_connected(self) -> bool:
        return len(self.components()) <= 1

    def subnetwork(self, node_ids: Iterable[int]) -> "CanSpec":
        keep = set(node_ids)
        nodes = tuple(n for n in self.nodes if n.id in keep)
        edges = tuple(e for e in self.edges if e.fine in keep and e.coarse in keep)
        return CanSpec(nodes, edges)


# -- block algebra ----------------------------------------------------------


@dataclass(frozen=True)
class BlockMatrix:
    """Dense matrix with named block layout, addressable by block indices."""

    row_sizes: tuple[int, ...]
    col_sizes: tuple[int, ...]
    dense: np.ndarray

    def __post_init__(self):
        expected = (sum(self.row_sizes), sum(self.col_sizes))
        if self.dense.shape != expected:
            raise DimensionMismatchError(
                f"dense shape {self.dense.shape} does not match layout {expected}"
            )

    def _offsets(self, sizes: tuple[int, ...]) -> list[int]:
        out = [0]
        for s in sizes:
            out.append(out[-1] + s)
        return out

    def block(self, bi: int, bj: int) -> np.ndarray:
        r = self._offsets(self.row_sizes)
        c = self._offsets(self.col_sizes)
        return self.dense[r[bi] : r[bi + 1], c[bj] : c[bj + 1]]


def adjacency(can: CanSpec) -> BlockMatrix:
    """Symmetric block adjacency: V on the (fine, coarse) block, V^T opposite."""
    dims = can.dims
    offs = np.concatenate(([0], np.cumsum(dims)))
    dense = np.zeros((offs[-1], offs[-1]))
    for e in can.edges:
        i, j = can.index(e.fine), can.index(e.coarse)
        v = e.clca.weights
        dense[offs[i] : offs[i + 1], offs[j] : offs[j + 1]] = v
        dense[offs[j] : offs[j + 1], offs[i] : offs[i + 1]] = v.T
    return BlockMatrix(dims, dims, dense)


def degree(can: CanSpec) -> BlockMatrix:
    """Block-diagonal degree: identity per embedding edge at the fine end,
    V^T V per abstraction edge at the coarse end."""
    dims = can.dims
    offs = np.concatenate(([0], np.cumsum(dims)))
    dense = np.zeros((offs[-1], offs[-1]))
    for e in can.edges:
        i, j = can.index(e.fine), can.index(e.coarse)
        v = e.clca.weights
        dense[offs[i] : offs[i + 1], offs[i] : offs[i + 1]] += np.eye(dims[i])
        dense[offs[j] : offs[j + 1], offs[j] : offs[j + 1]] += v.T @ v
    return BlockMatrix(dims, dims, dense)


def incidence(can: CanSpec) -> BlockMatrix:
    """Node-by-edge block incidence: I at the fine head, -V^T at the coarse
    tail; each edge contributes one block column of the fine width."""
    dims = can.dims
    edge_dims = tuple(can.dim_of(e.fine) for e in can.edges)
    row_offs = np.concatenate(([0], np.cumsum(dims)))
    col_offs = np.concatenate(([0], np.cumsum(edge_dims))).astype(int)
    dense = np.zeros((row_offs[-1], col_offs[-1] if can.edges else 0))
    for k, e in enumerate(can.edges):
        i, j = can.index(e.fine), can.index(e.coarse)
        dense[row_offs[i] : row_offs[i + 1], col_offs[k] : col_offs[k + 1]] = np.eye(dims[i])
        dense[row_offs[j] : row_offs[j + 1], col_offs[k] : col_offs[k + 1]] = -e.clca.weights.T
    return BlockMatrix(dims, edge_dims, dense)


LAPLACIAN_AGREEMENT_TOL = 1e-10


def laplacian(can: CanSpec) -> BlockMatrix:
    """Degree minus adjacency; cross-checked against the incidence product.

    Both defining formulas are computed and must agree to
    ``LAPLACIAN_AGREEMENT_TOL`` in Frobenius norm, otherwise an
    :class:`InternalConsistencyError` is raised.
    """
    dims = can.dims
    via_blocks = degree(can).dense - adjacency(can).dense
    b = incidence(can).dense
    via_incidence = b @ b.T
    gap = float(np.linalg.norm(via_blocks - via_incidence))
    if gap > LAPLACIAN_AGREEMENT_TOL * max(1.0, float(np.linalg.norm(via_blocks))):
        raise InternalConsistencyError(
            f"degree-adjacency and incidence Laplacians disagree by {gap:.3e}"
        )
    return BlockMatrix(dims, dims, via_blocks)


# -- consistency, reachability, spectrum ------------------------------------


@dataclass(frozen=True)
class ConsistencyReport:
    consistent: bool
    deviations: dict[EdgeKey, float]
    tol: float


def check_consistency(can: CanSpec, tol: float = 1e-8) -> ConsistencyReport:
    """Every edge map must embed isometrically: ||V^T V - I||_F <= tol."""
    deviations = {e.key: stiefel_deviation(e.clca.weights) for e in can.edges}
    ok = all(d <= tol for d in deviations.values())
    return ConsistencyReport(ok, deviations, tol)


@dataclass(frozen=True)
class ReachabilityReport:
    all_reachable: bool
    unreachable: frozenset[int]
    roots: tuple[int, ...]


def reachability_from_coarsest(can: CanSpec) -> ReachabilityReport:
    """Follow the embedding orientation (coarse to fine) from the coarsest
    model; on a disconnected network each component is swept from its own
    coarsest node."""
    out_arcs: dict[int, list[int]] = {n.id: [] for n in can.nodes}
    for e in can.edges:
        out_arcs[e.coarse].append(e.fine)
    unreachable: set[int] = set()
    roots = []
    for comp in can.components():
        root = comp[-1]  # last in global order = smallest dimension
        roots.append(root)
        seen = {root}
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v in out_arcs[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        unreachable.update(set(comp) - seen)
    return ReachabilityReport(not unreachable, frozenset(unreachable), tuple(roots))


def kernel_multiplicity(can: CanSpec, eig_tol: float = 1e-8) -> int:
    """Number of (numerically) null Laplacian eigenvalues.

    For a consistent connected network this equals the coarsest dimension
    exactly when every model is reachable from the coarsest one.
    """
    if not check_consistency(can).consistent:
        warnings.warn("kernel multiplicity computed on an inconsistent network", stacklevel=2)
    dense = laplacian(can).dense
    w = np.linalg.eigvalsh(symmetrize(dense))
    lam_max = max(float(w[-1]), 0.0)
    return int(np.count_nonzero(w <= eig_tol * lam_max))


def supports_global_sections(can: CanSpec) -> bool:
    """Whether a measure assignment satisfying every edge condition exists.

    Requires consistency plus reachability of every node from the (per
    component) coarsest one; on connected networks this is equivalent to the
    Laplacian kernel having the coarsest dimension.
    """
    if not check_consistency(can).consistent:
        return False
    return reachability_from_coarsest(can).all_reachable


SECTION_EDGE_TOL = 1e-9


def generate_global_section(
    can: CanSpec,
    coarsest_measure: GaussianMeasure | None = None,
    rng=None,
    path_tol: float = 1e-8,
    edge_tol: float = SECTION_EDGE_TOL,
) -> dict[int, GaussianMeasure]:
    """Propagate the coarsest measure along the embedding orientation.

    Every node receives the pushforward of the coarsest measure through the
    composed edge maps. When several oriented paths reach a node, their
    composites must agree within ``path_tol``; afterwards each edge condition
    ``Sigma_fine = V Sigma_coarse V^T`` is verified to ``edge_tol``. If
    ``coarsest_measure`` is omitted, a random full-rank one is drawn from
    ``rng``.
    """
    if not can.is_connected():
        raise TopologyError("network is disconnected; generate sections per component")
    if not supports_global_sections(can):
        raise TopologyError("network topology does not support global sections")
    root = can.coarsest_id
    if coarsest_measure is None:
        gen = np.random.default_rng(rng)
        d = can.dim_of(root)
        g = gen.standard_normal((d, d))
        coarsest_measure = GaussianMeasure(g @ g.T + 1e-3 * np.eye(d))
    if coarsest_measure.dim != can.dim_of(root):
        raise DimensionMismatchError(
            f"coarsest measure has dimension {coarsest_measure.dim}, "
            f"expected {can.dim_of(root)}"
        )

    out_arcs: dict[int, list[CanEdge]] = {n.id: [] for n in can.nodes}
    for e in can.edges:
        out_arcs[e.coarse].append(e)
    assigned: dict[int, GaussianMeasure] = {root: coarsest_measure}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for e in out_arcs[u]:
            pushed = pushforward_gaussian(e.clca.weights, assigned[u])
            if e.fine in assigned:
                gap = float(np.linalg.norm(assigned[e.fine].cov - pushed.cov))
                if gap > path_tol * max(1.0, float(np.linalg.norm(pushed.cov))):
                    raise MultiPathError(
                        f"paths into node {e.fine} disagree by {gap:.3e}"
                    )
            else:
                assigned[e.fine] = pushed
                queue.append(e.fine)

    for e in can.edges:  # every edge condition, including redundant edges
        lhs = assigned[e.fine].cov
        rhs = e.clca.weights @ assigned[e.coarse].cov @ e.clca.weights.T
        gap = float(np.linalg.norm(lhs - symmetrize(rhs)))
        if gap > edge_tol * max(1.0, float(np.linalg.norm(lhs))):
            raise MultiPathError(f"edge {e.key} violates the section condition by {gap:.3e}")
    return assigned


@dataclass(frozen=True)
class SmoothnessReport:
    total: float
    per_edge: dict[EdgeKey, float]
    failures: dict[EdgeKey, str]


def smoothness(can: CanSpec, measures: Mapping[int, GaussianMeasure]) -> SmoothnessReport:
    """Sum over edges of the divergence between the abstracted fine measure
    and the coarse one; zero on global sections.

    An edge whose supports are incomparable contributes an infinite term and
    is reported in ``failures`` with a diagnostic instead of aborting.
    """
    if not check_consistency(can).consistent:
        warnings.warn("smoothness evaluated on an inconsistent network", stacklevel=2)
    missing = [n.id for n in can.nodes if n.id not in measures]
    if missing:
        raise ValidationError(f"measures missing for nodes {missing}")
    per_edge: dict[EdgeKey, float] = {}
    failures: dict[EdgeKey, str] = {}
    for e in can.edges:
        try:
            per_edge[e.key] = kl_gaussian_abstracted(
                e.clca.abstraction, measures[e.fine], measures[e.coarse]
            )
        except ValidationError as exc:
            per_edge[e.key] = math.inf
            failures[e.key] = str(exc)
    return SmoothnessReport(float(sum(per_edge.values())), per_edge, failures)
