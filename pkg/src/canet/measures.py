"""Zero-mean Gaussian measures, finite mixtures, and Stiefel primitives.

Everything here works directly on covariance matrices: pushforwards, convex
combinations, the rank-aware divergence used to score abstractions, and the
two Stiefel operations (polar projection and masked sampling) that the rest
of the package builds on.

All types are immutable after construction and all functions are pure, so
values can be shared freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    IndefiniteMatrixError,
    InfeasibleMaskError,
    SupportMismatchError,
    ValidationError,
)

# Default tolerances. Rank decisions are made at RANK_TOL relative to the
# largest eigenvalue; eigenvalues down to -PSD_TOL * lambda_max are treated
# as rounding noise and clamped, anything below is an error.
RANK_TOL = 1e-9
PSD_TOL = 1e-8
STIEFEL_TOL = 1e-8
MERGE_TOL = 1e-9
SYMMETRY_TOL = 1e-10


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _as_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    return arr


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenpairs of a symmetric PSD matrix, sorted by descending eigenvalue.

    ``eigenvalues`` are clamped to be nonnegative, ``eigenvectors`` holds the
    matching orthonormal columns, and ``rank`` counts eigenvalues above
    ``rank_tol * lambda_max``. Ties in the ordering are broken by the
    position LAPACK returned them in, so results are reproducible.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    rank: int

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T

    def positive_part(self) -> tuple[np.ndarray, np.ndarray]:
        """(eigenvalues, eigenvectors) restricted to the rank-r support."""
        r = self.rank
        return self.eigenvalues[:r], self.eigenvectors[:, :r]


def eigendecompose(
    cov,
    rank_tol: float = RANK_TOL,
    clamp_tol: float | None = None,
) -> EigenDecomposition:
    """Symmetric eigendecomposition with rank control.

    Eigenvalues are returned in descending order. Small negatives (at least
    ``-clamp_tol * lambda_max``, default ``clamp_tol = rank_tol``) are
    clamped to zero; anything more negative raises
    :class:`IndefiniteMatrixError`. The rank counts eigenvalues strictly
    above ``rank_tol * lambda_max``.
    """
    mat = _as_matrix(cov, "cov")
    n, m = mat.shape
    if n != m:
        raise ValidationError(f"expected a square matrix, got {mat.shape}")
    asym = np.linalg.norm(mat - mat.T)
    if asym > SYMMETRY_TOL * max(1.0, np.linalg.norm(mat)):
        raise ValidationError(f"matrix is not symmetric (skew norm {asym:.3e})")
    if clamp_tol is None:
        clamp_tol = rank_tol

    w, u = np.linalg.eigh(symmetrize(mat))
    # eigh returns ascending order; stable argsort keeps LAPACK order on ties.
    order = np.argsort(-w, kind="stable")
    w = w[order]
    u = u[:, order]

    scale = max(float(w[0]), 0.0) if n else 0.0
    floor = -clamp_tol * scale
    if n and float(w[-1]) < min(floor, 0.0):
        raise IndefiniteMatrixError(
            f"eigenvalue {w[-1]:.3e} below tolerance {floor:.3e}; matrix is indefinite"
        )
    w = np.clip(w, 0.0, None)
    rank = int(np.count_nonzero(w > rank_tol * scale))
    return EigenDecomposition(_readonly(w), _readonly(u), rank)


@dataclass(frozen=True)
class GaussianMeasure:
    """Zero-mean Gaussian identified with its symmetric PSD covariance.

    The eigendecomposition is computed on first access and cached; the check
    that the spectrum is nonnegative (to ``-PSD_TOL * lambda_max``) happens
    at that point.
    """

    cov: np.ndarray
    rank_tol: float = RANK_TOL

    def __post_init__(self):
        mat = _as_matrix(self.cov, "cov")
        n, m = mat.shape
        if n != m or n == 0:
            raise ValidationError(f"covariance must be square and nonempty, got {mat.shape}")
        asym = np.linalg.norm(mat - mat.T)
        if asym > SYMMETRY_TOL * max(1.0, np.linalg.norm(mat)):
            raise ValidationError(f"covariance is not symmetric (skew norm {asym:.3e})")
        object.__setattr__(self, "cov", _readonly(symmetrize(mat)))

    @property
    def dim(self) -> int:
        return self.cov.shape[0]

    @cached_property
    def eig(self) -> EigenDecomposition:
        return eigendecompose(self.cov, rank_tol=self.rank_tol, clamp_tol=PSD_TOL)

    @property
    def rank(self) -> int:
        return self.eig.rank

    def __eq__(self, other):
        if not isinstance(other, GaussianMeasure):
            return NotImplemented
        return self.cov.shape == other.cov.shape and bool(np.array_equal(self.cov, other.cov))

    def __hash__(self):
        return hash((self.cov.shape, self.cov.tobytes()))


@dataclass(frozen=True)
class MixtureMeasure:
    """Finite convex mixture of equal-dimension Gaussian measures."""

    components: tuple[tuple[float, GaussianMeasure], ...]

    def __post_init__(self):
        if not self.components:
            raise ValidationError("mixture needs at least one component")
        dims = {m.dim for _, m in self.components}
        if len(dims) != 1:
            raise DimensionMismatchError(f"mixed component dimensions: {sorted(dims)}")
        weights = np.array([w for w, _ in self.components], dtype=float)
        if np.any(weights <= 0.0) or np.any(weights > 1.0):
            raise ValidationError("component weights must lie in (0, 1]")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ValidationError(f"weights sum to {weights.sum()!r}, expected 1")
        object.__setattr__(
            self, "components", tuple((float(w), m) for w, m in self.components)
        )

    @classmethod
    def from_gaussian(cls, mu: GaussianMeasure) -> "MixtureMeasure":
        return cls(((1.0, mu),))

    @property
    def dim(self) -> int:
        return self.components[0][1].dim

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.components])

    @property
    def measures(self) -> tuple[GaussianMeasure, ...]:
        return tuple(m for _, m in self.components)

    def canonical(self, merge_tol: float = MERGE_TOL) -> "MixtureMeasure":
        """Merge components with matching covariances and sort deterministically.

        Near-identical covariances (Frobenius distance below ``merge_tol``)
        collapse into one component whose covariance is the weight-averaged
        one; ordering is by descending weight, then trace, then raw bytes.
        """
        merged: list[list] = []  # [weight, cov]
        for w, m in self.components:
            for entry in merged:
                if np.linalg.norm(entry[1] - m.cov) < merge_tol:
                    total = entry[0] + w
                    entry[1] = (entry[0] * entry[1] + w * m.cov) / total
                    entry[0] = total
                    break
            else:
                merged.append([w, np.array(m.cov)])
        merged.sort(key=lambda e: (-e[0], float(np.trace(e[1])), e[1].tobytes()))
        total = sum(e[0] for e in merged)
        comps = tuple((e[0] / total, GaussianMeasure(e[1])) for e in merged)
        return MixtureMeasure(comps)


def as_mixture(mu) -> MixtureMeasure:
    if isinstance(mu, MixtureMeasure):
        return mu
    if isinstance(mu, GaussianMeasure):
        return MixtureMeasure.from_gaussian(mu)
    raise ValidationError(f"expected a measure, got {type(mu).__name__}")


def pushforward_gaussian(map_matrix, mu: GaussianMeasure) -> GaussianMeasure:
    """Image of ``mu`` under the linear map ``x -> M x``: covariance M Sigma M^T."""
    m = _as_matrix(map_matrix, "map")
    if m.shape[1] != mu.dim:
        raise DimensionMismatchError(
            f"map has {m.shape[1]} columns but measure has dimension {mu.dim}"
        )
    return GaussianMeasure(symmetrize(m @ mu.cov @ m.T), rank_tol=mu.rank_tol)


def pushforward_mixture(map_matrix, mix: MixtureMeasure) -> MixtureMeasure:
    """Componentwise pushforward; weights are untouched."""
    mix = as_mixture(mix)
    return MixtureMeasure(
        tuple((w, pushforward_gaussian(map_matrix, m)) for w, m in mix.components)
    )


def convex_combine(
    lam: float,
    a: MixtureMeasure,
    b: MixtureMeasure,
    prune_tol: float = 0.0,
    merge_tol: float = MERGE_TOL,
) -> MixtureMeasure:
    """Mixture ``lam * a + (1 - lam) * b``.

    Components whose resulting weight falls to ``prune_tol`` or below are
    dropped (so ``lam`` of exactly 0 or 1 returns the surviving operand
    unchanged) and matching-covariance components are merged. ``prune_tol``
    defaults to 0; raise it for long diffusion runs where component counts
    would otherwise grow without bound.
    """
    a = as_mixture(a)
    b = as_mixture(b)
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimensions differ: {a.dim} vs {b.dim}")
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lambda must be in [0, 1], got {lam}")
    if lam == 1.0:
        return a
    if lam == 0.0:
        return b
    scaled = [(lam * w, m) for w, m in a.components]
    scaled += [((1.0 - lam) * w, m) for w, m in b.components]
    kept = [(w, m) for w, m in scaled if w > prune_tol]
    if not kept:
        raise ValidationError("pruning removed every component")
    total = sum(w for w, _ in kept)
    mix = MixtureMeasure(tuple((w / total, m) for w, m in kept))
    return mix.canonical(merge_tol)


def mixture_distance(a: MixtureMeasure, b: MixtureMeasure, merge_tol: float = MERGE_TOL) -> float:
    """Distance between mixtures after canonical merging.

    Components are greedily matched by covariance Frobenius distance; the
    result is the worst matched pair's ``max(cov distance, weight gap)``.
    Mixtures with different component counts after merging are infinitely
    far apart.
    """
    a = as_mixture(a).canonical(merge_tol)
    b = as_mixture(b).canonical(merge_tol)
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dimensions differ: {a.dim} vs {b.dim}")
    if len(a.components) != len(b.components):
        return math.inf
    remaining = list(b.components)
    worst = 0.0
    for wa, ma in a.components:
        dists = [np.linalg.norm(ma.cov - mb.cov) for _, mb in remaining]
        k = int(np.argmin(dists))
        wb, _ = remaining.pop(k)
        worst = max(worst, float(dists[k]), abs(wa - wb))
    return worst


def _log_pseudo_det(eigenvalues: np.ndarray) -> float:
    return float(np.sum(np.log(eigenvalues)))


def kl_gaussian_abstracted(
    v_abs,
    chi_i: GaussianMeasure,
    chi_j: GaussianMeasure,
    rank_tol: float = RANK_TOL,
) -> float:
    """Rank-aware KL divergence of ``chi_j`` from the abstracted ``chi_i``.

    ``v_abs`` is the abstraction map (coarse-by-fine). With
    ``S = v_abs Sigma_i v_abs^T`` restricted to the rank-r support shared
    with ``Sigma_j``, the value is

        tr(S^+ Sigma_j) + log pdet(S) - log pdet(Sigma_j) - r.

    Pseudo-inverse and pseudo-determinant are taken over eigenvalues above
    ``rank_tol * lambda_max``. Unequal ranks mean the supports are not
    comparable and raise :class:`SupportMismatchError`.
    """
    v_abs = _as_matrix(v_abs, "abstraction map")
    if v_abs.shape != (chi_j.dim, chi_i.dim):
        raise DimensionMismatchError(
            f"abstraction map shape {v_abs.shape} does not match "
            f"({chi_j.dim}, {chi_i.dim})"
        )
    pushed = symmetrize(v_abs @ chi_i.cov @ v_abs.T)
    eig_s = eigendecompose(pushed, rank_tol=rank_tol, clamp_tol=PSD_TOL)
    eig_j = chi_j.eig
    if eig_s.rank != eig_j.rank:
        raise SupportMismatchError(
            f"pushforward covariance has rank {eig_s.rank} but target has rank "
            f"{eig_j.rank}; no abstraction exists on these supports"
        )
    r = eig_j.rank
    if r == 0:
        return 0.0
    s_vals, s_vecs = eig_s.positive_part()
    trace_term = float(np.sum((s_vecs.T @ chi_j.cov @ s_vecs).diagonal() / s_vals))
    j_vals, _ = eig_j.positive_part()
    return trace_term + _log_pseudo_det(s_vals) - _log_pseudo_det(j_vals) - r


def stiefel_deviation(v) -> float:
    """Frobenius norm of V^T V - I."""
    v = _as_matrix(v, "V")
    return float(np.linalg.norm(v.T @ v - np.eye(v.shape[1])))


def require_stiefel(v, tol: float = STIEFEL_TOL, name: str = "V") -> np.ndarray:
    v = _as_matrix(v, name)
    if v.shape[0] < v.shape[1]:
        raise ValidationError(f"{name} must be tall, got shape {v.shape}")
    dev = stiefel_deviation(v)
    if dev > tol:
        raise ValidationError(f"{name} is not orthonormal-column: deviation {dev:.3e}")
    return v


def polar_prox(s, with_uniqueness: bool = False, rank_tol: float = RANK_TOL):
    """Nearest orthonormal-column matrix: the orthogonal polar factor of ``s``.

    Computed through the thin SVD, so a rank-deficient input still yields a
    deterministic orthonormal completion of the null directions; pass
    ``with_uniqueness=True`` to also learn whether the projection was unique
    (it is iff ``s`` has full column rank).
    """
    s = _as_matrix(s, "S")
    d_i, d_j = s.shape
    if d_i < d_j:
        raise ValidationError(f"expected a tall matrix, got shape {s.shape}")
    u, sing, vt = np.linalg.svd(s, full_matrices=False)
    out = u @ vt
    if not with_uniqueness:
        return out
    unique = bool(d_j == 0 or sing[-1] > rank_tol * max(sing[0], 1e-300))
    return out, unique


def _mask_array(mask) -> np.ndarray:
    entries = getattr(mask, "entries", mask)
    arr = _as_matrix(entries, "mask")
    if not np.isin(arr, (0.0, 1.0)).all():
        raise ValidationError("mask entries must be 0 or 1")
    return arr


def random_stiefel(d_i: int, d_j: int, mask=None, rng=None) -> np.ndarray:
    """Draw a random d_i-by-d_j orthonormal-column matrix, optionally masked.

    A mask must have disjoint column supports (at most one 1 per row) and no
    empty column; then zeroing a Gaussian draw outside the mask and
    normalizing each column is already exactly orthonormal. Without a mask
    the draw is Haar via sign-fixed QR.
    """
    if d_i < d_j or d_j < 1:
        raise ValidationError(f"need d_i >= d_j >= 1, got ({d_i}, {d_j})")
    rng = np.random.default_rng(rng)
    if mask is None:
        x = rng.standard_normal((d_i, d_j))
        q, r = np.linalg.qr(x)
        signs = np.sign(np.diagonal(r))
        signs[signs == 0] = 1.0
        return q * signs

    arr = _mask_array(mask)
    if arr.shape != (d_i, d_j):
        raise DimensionMismatchError(f"mask shape {arr.shape} != ({d_i}, {d_j})")
    if np.any(arr.sum(axis=1) > 1.0):
        raise InfeasibleMaskError("mask columns overlap: some row has several 1s")
    col_sizes = arr.sum(axis=0)
    if np.any(col_sizes < 1.0):
        raise InfeasibleMaskError("mask has an all-zero column")
    v = np.zeros((d_i, d_j))
    for c in range(d_j):
        rows = np.flatnonzero(arr[:, c])
        for _ in range(100):
            draw = rng.standard_normal(rows.size)
            norm = np.linalg.norm(draw)
            if norm > 1e-12:
                break
        else:  # pragma: no cover - probability zero
            raise ValidationError("failed to draw a nonzero column")
        v[rows, c] = draw / norm
    return v
