"""Measure-valued cochains and the transfer operators that diffuse causal
knowledge over the network.

The node-to-edge transfer mixes each fine measure with the embedded coarse
one; the edge-to-node transfer pulls edge measures back (identity at the
fine end, abstraction at the coarse end) and convex-combines them with
per-node edge weights. Their composition is the measure-level Laplacian
operator, whose fixed points are exactly the global sections on consistent
networks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .errors import DimensionMismatchError, ValidationError
from .measures import (
    MERGE_TOL,
    MixtureMeasure,
    as_mixture,
    convex_combine,
    mixture_distance,
    pushforward_mixture,
)
from .network import CanSpec, EdgeKey


@dataclass(frozen=True)
class ZeroCochain:
    """One mixture per node."""

    measures: Mapping[int, MixtureMeasure]

    def __post_init__(self):
        object.__setattr__(
            self, "measures", {k: as_mixture(v) for k, v in dict(self.measures).items()}
        )

    @classmethod
    def from_gaussians(cls, assignment) -> "ZeroCochain":
        return cls({k: as_mixture(v) for k, v in dict(assignment).items()})

    def __getitem__(self, node_id: int) -> MixtureMeasure:
        return self.measures[node_id]

    def validate_against(self, can: CanSpec) -> None:
        missing = [n.id for n in can.nodes if n.id not in self.measures]
        if missing:
            raise ValidationError(f"cochain missing nodes {missing}")
        for n in can.nodes:
            if self.measures[n.id].dim != n.dim:
                raise DimensionMismatchError(
                    f"node {n.id}: cochain dimension {self.measures[n.id].dim} != {n.dim}"
                )


@dataclass(frozen=True)
class OneCochain:
    """One mixture per edge, living in the finer endpoint's space."""

    measures: Mapping[EdgeKey, MixtureMeasure]

    def __post_init__(self):
        object.__setattr__(
            self, "measures", {k: as_mixture(v) for k, v in dict(self.measures).items()}
        )

    def __getitem__(self, key: EdgeKey) -> MixtureMeasure:
        return self.measures[key]

    def validate_against(self, can: CanSpec) -> None:
        for e in can.edges:
            if e.key not in self.measures:
                raise ValidationError(f"cochain missing edge {e.key}")
            if self.measures[e.key].dim != can.dim_of(e.fine):
                raise DimensionMismatchError(
                    f"edge {e.key}: cochain dimension {self.measures[e.key].dim} "
                    f"!= fine dimension {can.dim_of(e.fine)}"
                )


@dataclass(frozen=True)
class WeightProfile:
    """Mixing weights for the transfer operators.

    ``edge_mix`` is the coefficient on the fine measure inside each edge
    combination, ``dynamics_mix`` the retention coefficient of the
    discrete-time update. ``node_edge_weights`` assigns each node a
    distribution over its incident edges; None means uniform.
    """

    edge_mix: float = 0.5
    dynamics_mix: float = 0.5
    node_edge_weights: Mapping[int, Mapping[EdgeKey, float]] | None = None
    merge_tol: float = MERGE_TOL
    prune_tol: float = 0.0

    def __post_init__(self):
        for name in ("edge_mix", "dynamics_mix"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {val}")

    def weights_at(self, can: CanSpec, node_id: int) -> dict[EdgeKey, float]:
        incident = [e.key for e in can.incident_edges(node_id)]
        if not incident:
            return {}
        if self.node_edge_weights is None or node_id not in self.node_edge_weights:
            w = 1.0 / len(incident)
            return {k: w for k in incident}
        given = dict(self.node_edge_weights[node_id])
        if set(given) != set(incident):
            raise ValidationError(
                f"node {node_id}: weights keyed by {sorted(given)} but incident "
                f"edges are {sorted(incident)}"
            )
        vals = np.array(list(given.values()))
        if np.any(vals < 0.0) or np.any(vals > 1.0):
            raise ValidationError(f"node {node_id}: edge weights must be in [0, 1]")
        if abs(float(vals.sum()) - 1.0) > 1e-12:
            raise ValidationError(f"node {node_id}: edge weights sum to {vals.sum()!r}")
        return given


def _weighted_mixture(parts, merge_tol: float, prune_tol: float) -> MixtureMeasure:
    """Combine (weight, mixture) parts into one mixture; weights sum to 1."""
    comps = []
    for coeff, mix in parts:
        if coeff <= prune_tol:
            continue
        for w, m in as_mixture(mix).components:
            comps.append((coeff * w, m))
    if not comps:
        raise ValidationError("no components left after weighting")
    total = sum(w for w, _ in comps)
    mix = MixtureMeasure(tuple((w / total, m) for w, m in comps))
    return mix.canonical(merge_tol)


def coboundary(can: CanSpec, chi: ZeroCochain, w: WeightProfile | None = None) -> OneCochain:
    """Node-to-edge transfer: each edge mixes the fine measure with the
    embedded coarse one, ``edge_mix`` of the former."""
    w = w or WeightProfile()
    chi.validate_against(can)
    out = {}
    for e in can.edges:
        embedded = pushforward_mixture(e.clca.weights, chi[e.coarse])
        out[e.key] = convex_combine(
            w.edge_mix, chi[e.fine], embedded, prune_tol=w.prune_tol, merge_tol=w.merge_tol
        )
    return OneCochain(out)


def boundary(
    can: CanSpec,
    chi1: OneCochain,
    w: WeightProfile | None = None,
    fallback: ZeroCochain | None = None,
) -> ZeroCochain:
    """Edge-to-node transfer: pull each incident edge measure back to the
    node (identity at the fine end, abstraction at the coarse end) and
    combine with the node's edge weights.

    Nodes with no incident edges take their entry from ``fallback``.
    """
    w = w or WeightProfile()
    chi1.validate_against(can)
    out: dict[int, MixtureMeasure] = {}
    for node in can.nodes:
        weights = w.weights_at(can, node.id)
        if not weights:
            if fallback is None or node.id not in fallback.measures:
                raise ValidationError(
                    f"node {node.id} is isolated and no fallback cochain was given"
                )
            out[node.id] = fallback[node.id]
            continue
        parts = []
        for e in can.incident_edges(node.id):
            pulled = (
                chi1[e.key]
                if node.id == e.fine
                else pushforward_mixture(e.clca.abstraction, chi1[e.key])
            )
            parts.append((weights[e.key], pulled))
        out[node.id] = _weighted_mixture(parts, w.merge_tol, w.prune_tol)
    return ZeroCochain(out)


def laplacian_operator(
    can: CanSpec, chi: ZeroCochain, w: WeightProfile | None = None
) -> ZeroCochain:
    """Boundary after coboundary; isolated nodes pass through unchanged."""
    w = w or WeightProfile()
    return boundary(can, coboundary(can, chi, w), w, fallback=chi)


def laplacian_local(
    can: CanSpec, chi: ZeroCochain, w: WeightProfile | None = None
) -> ZeroCochain:
    """Direct per-node evaluation of the same operator, used to cross-check
    the composed form: embedding terms where the node is fine, abstraction
    of the edge combination where it is coarse."""
    w = w or WeightProfile()
    chi.validate_against(can)
    out: dict[int, MixtureMeasure] = {}
    for node in can.nodes:
        weights = w.weights_at(can, node.id)
        if not weights:
            out[node.id] = chi[node.id]
            continue
        parts = []
        for e in can.incident_edges(node.id):
            edge_mix = convex_combine(
                w.edge_mix,
                chi[e.fine],
                pushforward_mixture(e.clca.weights, chi[e.coarse]),
                prune_tol=w.prune_tol,
                merge_tol=w.merge_tol,
            )
            if node.id == e.fine:
                parts.append((weights[e.key], edge_mix))
            else:
                parts.append((weights[e.key], pushforward_mixture(e.clca.abstraction, edge_mix)))
        out[node.id] = _weighted_mixture(parts, w.merge_tol, w.prune_tol)
    return ZeroCochain(out)


def step_dynamics(
    can: CanSpec,
    chi: ZeroCochain,
    w: WeightProfile | None = None,
    dynamics_mix: float | None = None,
) -> ZeroCochain:
    """One step of the retention dynamics: nodewise convex combination of the
    current cochain (weight ``dynamics_mix``) with its Laplacian image."""
    w = w or WeightProfile()
    lam = w.dynamics_mix if dynamics_mix is None else dynamics_mix
    image = laplacian_operator(can, chi, w)
    return ZeroCochain(
        {
            node.id: convex_combine(
                lam, chi[node.id], image[node.id], prune_tol=w.prune_tol, merge_tol=w.merge_tol
            )
            for node in can.nodes
        }
    )


def iterate_dynamics(
    can: CanSpec,
    chi: ZeroCochain,
    steps: int,
    w: WeightProfile | None = None,
) -> Iterator[tuple[int, ZeroCochain]]:
    """Yield (step, cochain) pairs, starting from (0, chi)."""
    yield 0, chi
    current = chi
    for t in range(1, steps + 1):
        current = step_dynamics(can, current, w)
        yield t, current


@dataclass(frozen=True)
class FixedPointReport:
    fixed: bool
    deviations: dict[int, float]
    tol: float


def is_fixed_point(
    can: CanSpec,
    chi: ZeroCochain,
    w: WeightProfile | None = None,
    tol: float = 1e-9,
) -> FixedPointReport:
    """Whether the Laplacian image reproduces the cochain node by node.

    Mixtures are compared after canonical merging; the per-node deviation is
    the matched-component distance (infinite when component counts differ).
    """
    w = w or WeightProfile()
    image = laplacian_operator(can, chi, w)
    deviations = {
        node.id: mixture_distance(chi[node.id], image[node.id], merge_tol=w.merge_tol)
        for node in can.nodes
    }
    fixed = all(d <= tol for d in deviations.values())
    return FixedPointReport(fixed, deviations, tol)
