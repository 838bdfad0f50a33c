"""Constructive linear causal abstractions: structure, validity, composition,
the spectral existence test, and the recovery metrics used in benchmarks.

A CLCA is a pair (B, V): B is a binary partition assigning each fine
variable to exactly one coarse block, V a same-shaped orthonormal-column
weight matrix supported on B. V embeds coarse into fine; V^T abstracts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, OrientationError, ValidationError
from .measures import (
    GaussianMeasure,
    STIEFEL_TOL,
    _as_matrix,
    _readonly,
    stiefel_deviation,
)

SUPPORT_TOL = 1e-6


@dataclass(frozen=True)
class StructureMatrix:
    """Binary fine-by-coarse block assignment.

    Canonical instances have exactly one 1 per row (disjoint partition of the
    fine variables) and no empty column (every coarse variable covered).
    Construct with ``strict=False`` to hold an arbitrary binary matrix, e.g.
    for validity reporting.
    """

    entries: np.ndarray
    strict: bool = field(default=True, compare=False)

    def __post_init__(self):
        arr = _as_matrix(self.entries, "structure")
        if not np.isin(arr, (0.0, 1.0)).all():
            raise ValidationError("structure entries must be 0 or 1")
        object.__setattr__(self, "entries", _readonly(arr))
        if self.strict:
            problems = structure_violations(arr)
            if problems:
                raise ValidationError("invalid structure: " + "; ".join(problems))

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def d_fine(self) -> int:
        return self.entries.shape[0]

    @property
    def d_coarse(self) -> int:
        return self.entries.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return self.entries != 0.0

    def __eq__(self, other):
        if not isinstance(other, StructureMatrix):
            return NotImplemented
        return bool(np.array_equal(self.entries, other.entries))

    def __hash__(self):
        return hash((self.entries.shape, self.entries.tobytes()))


def structure_violations(entries: np.ndarray) -> list[str]:
    msgs = []
    d_fine, d_coarse = entries.shape
    if d_fine < d_coarse:
        msgs.append(f"more coarse than fine variables ({d_fine} < {d_coarse})")
    row_sums = entries.sum(axis=1)
    bad_rows = np.flatnonzero(row_sums != 1.0)
    if bad_rows.size:
        msgs.append(f"rows {bad_rows.tolist()} not assigned to exactly one block")
    empty_cols = np.flatnonzero(entries.sum(axis=0) < 1.0)
    if empty_cols.size:
        msgs.append(f"non-surjective: columns {empty_cols.tolist()} are empty")
    return msgs


@dataclass(frozen=True)
class Clca:
    """A structure matrix together with its orthonormal weight matrix.

    The constructor only checks shapes; use :func:`validate_clca` for the
    support and orthonormality conditions, which solver iterates may violate.
    """

    structure: StructureMatrix
    weights: np.ndarray

    def __post_init__(self):
        w = _as_matrix(self.weights, "weights")
        if w.shape != self.structure.shape:
            raise DimensionMismatchError(
                f"weights shape {w.shape} != structure shape {self.structure.shape}"
            )
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def d_fine(self) -> int:
        return self.structure.d_fine

    @property
    def d_coarse(self) -> int:
        return self.structure.d_coarse

    @property
    def embedding(self) -> np.ndarray:
        """Fine-by-coarse map carrying coarse measures into the fine space."""
        return self.weights

    @property
    def abstraction(self) -> np.ndarray:
        """Coarse-by-fine map, the transpose of the embedding."""
        return self.weights.T

    @classmethod
    def identity(cls, dim: int) -> "Clca":
        return cls(StructureMatrix(np.eye(dim)), np.eye(dim))


@dataclass(frozen=True)
class ClcaValidity:
    valid: bool
    structure_problems: tuple[str, ...]
    off_support_max: float
    stiefel_deviation: float
    messages: tuple[str, ...]


def validate_clca(
    c: Clca,
    stiefel_tol: float = STIEFEL_TOL,
    support_tol: float = 0.0,
) -> ClcaValidity:
    """Report (never raise) how far ``c`` is from a valid CLCA.

    Checks the block structure counts, that weights vanish off the support
    (strictly beyond ``support_tol``), and the orthonormality deviation.
    """
    problems = tuple(structure_violations(c.structure.entries))
    off = c.weights[~c.structure.mask]
    off_max = float(np.abs(off).max()) if off.size else 0.0
    dev = stiefel_deviation(c.weights)
    messages = list(problems)
    if off_max > support_tol:
        messages.append(f"weights leak off the support (max |entry| {off_max:.3e})")
    if dev > stiefel_tol:
        messages.append(f"weights not orthonormal (deviation {dev:.3e})")
    return ClcaValidity(
        valid=not messages,
        structure_problems=problems,
        off_support_max=off_max,
        stiefel_deviation=dev,
        messages=tuple(messages),
    )


def compose_clca(inner: Clca, outer: Clca) -> Clca:
    """Compose abstractions i->j (inner) and j->k (outer) into i->k.

    In the embedding direction the composite maps are plain products:
    structure ``B_ij B_jk`` and weights ``V_ij V_jk``. Products of partition
    matrices are again partitions, and products of orthonormal-column
    matrices stay orthonormal, so the composite is a valid CLCA.
    """
    if inner.d_coarse != outer.d_fine:
        raise DimensionMismatchError(
            f"cannot chain shapes {inner.structure.shape} and {outer.structure.shape}"
        )
    structure = StructureMatrix(inner.structure.entries @ outer.structure.entries)
    return Clca(structure, inner.weights @ outer.weights)


def interlacing_check(
    sigma_l: GaussianMeasure,
    sigma_h: GaussianMeasure,
    slack_tol: float | None = None,
) -> bool:
    """Spectral necessary condition for an abstraction from fine to coarse.

    With ascending eigenvalues lam (length l, zeros included) and kap
    (length h), requires ``lam_i <= kap_i <= lam_{i + l - h}`` for every
    ``i``. ``slack_tol`` is an additive tolerance absorbing floating-point
    noise; it defaults to 1e-8 times the largest eigenvalue seen.
    """
    ell, h = sigma_l.dim, sigma_h.dim
    if ell < h:
        raise OrientationError(f"fine dimension {ell} smaller than coarse {h}")
    lam = sigma_l.eig.eigenvalues[::-1]
    kap = sigma_h.eig.eigenvalues[::-1]
    if slack_tol is None:
        slack_tol = 1e-8 * max(float(lam[-1]), float(kap[-1]), 0.0)
    lower_ok = np.all(lam[:h] <= kap + slack_tol)
    upper_ok = np.all(kap <= lam[ell - h :] + slack_tol)
    return bool(lower_ok and upper_ok)


def _support_of(estimated, support_tol: float) -> np.ndarray:
    if isinstance(estimated, Clca):
        return estimated.structure.mask & (np.abs(estimated.weights) > support_tol)
    if isinstance(estimated, StructureMatrix):
        return estimated.mask
    return np.abs(_as_matrix(estimated, "estimated")) > support_tol


def structural_f1(estimated, truth, support_tol: float = SUPPORT_TOL) -> float:
    """Entrywise F1 between a learned support and the true block structure.

    ``estimated`` may be a Clca (support of B .* V), a structure matrix, or a
    raw weight matrix thresholded at ``support_tol``. Returns 1.0 when both
    supports are empty.
    """
    est = _support_of(estimated, support_tol)
    tru = truth.mask if isinstance(truth, StructureMatrix) else _as_matrix(truth) != 0.0
    if est.shape != tru.shape:
        raise DimensionMismatchError(f"shapes differ: {est.shape} vs {tru.shape}")
    tp = int(np.count_nonzero(est & tru))
    fp = int(np.count_nonzero(est & ~tru))
    fn = int(np.count_nonzero(~est & tru))
    if tp == fp == fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def constructiveness(learned: Clca, support_tol: float = SUPPORT_TOL) -> bool:
    """True when every coarse variable keeps at least one fine contributor."""
    masked = np.where(learned.structure.mask, np.abs(learned.weights), 0.0)
    return bool(np.all(masked.max(axis=0) > support_tol))


def frobenius_distance(estimated, truth) -> float:
    """Column-signwise minimal normalized Frobenius distance.

    Column signs are not identifiable, so each column independently picks the
    sign minimizing the residual; the result is ``min ||Vhat - V*|| / ||V*||``
    over all sign flips, which lies in [0, 2] for orthonormal inputs.
    """
    est = _as_matrix(estimated, "estimated")
    tru = _as_matrix(truth, "truth")
    if est.shape != tru.shape:
        raise DimensionMismatchError(f"shapes differ: {est.shape} vs {tru.shape}")
    denom = np.linalg.norm(tru)
    if denom == 0.0:
        raise ValidationError("reference matrix is zero")
    cross = np.abs(np.sum(est * tru, axis=0)).sum()
    sq = np.linalg.norm(est) ** 2 + denom**2 - 2.0 * cross
    return float(np.sqrt(max(sq, 0.0)) / denom)
