"""ADMM solver for masked-Stiefel abstraction recovery.

Given a fine covariance, a coarse covariance, and a block structure B, the
solver looks for an orthonormal-column V supported on B whose abstraction
maps the fine Gaussian exactly onto the coarse one. The exact-abstraction
condition is equivalent, after whitening both covariances by their
rank-truncated eigenfactors A and C, to T = A^T (B .* V) C having
orthonormal columns. That leaves a feasibility problem over two Stiefel
manifolds, handled by splitting: V is relaxed to Euclidean space, a copy Y
carries the orthonormality of V, T carries the whitened condition, and
scaled duals Psi/Upsilon tie the pieces together:

    L = 1/2 ||B .* V - Y + Psi||^2 + 1/2 ||A^T (B .* V) C - T + Upsilon||^2

Every update is closed-form: a (cached) SPD solve for V on its support, a
polar projection for Y and T, and additive dual steps. Convergence follows
the usual four-residual test with absolute/relative thresholds.

All update functions accept an optional leading batch axis so independent
restarts can be iterated together; ``solve`` exploits this.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .clca import Clca, StructureMatrix, validate_clca
from .errors import InfeasibleShapesError, ValidationError
from .measures import (
    GaussianMeasure,
    RANK_TOL,
    eigendecompose,
    kl_gaussian_abstracted,
    polar_prox,
    random_stiefel,
)

POLAR_FALLBACK_TOL = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rules and restart policy.

    ``rng_seed`` fixes the restart initializations bit-for-bit; trial ``t``
    draws from a generator seeded with ``rng_seed ^ t``. ``kl_zero_tol`` is
    the post-hoc verification bound a converged trial must meet before it is
    accepted; residual convergence at tolerance tau leaves a divergence of
    roughly tau^2 times a conditioning factor, so the bound must sit above
    that stopping scale. ``chunk_size`` only groups restarts into batches
    for speed and has no effect on results.
    """

    tau_abs: float = 1e-4
    tau_rel: float = 1e-4
    max_iters: int = 1000
    ntrials: int = 50
    rng_seed: int = 0
    kl_zero_tol: float = 1e-3
    chunk_size: int = 32

    def __post_init__(self):
        if min(self.tau_abs, self.tau_rel) <= 0:
            raise ValidationError("tolerances must be positive")
        if self.max_iters < 1 or self.ntrials < 1 or self.chunk_size < 1:
            raise ValidationError("max_iters, ntrials and chunk_size must be >= 1")
        if self.kl_zero_tol <= 0:
            raise ValidationError("kl_zero_tol must be positive")


@dataclass(frozen=True)
class LocalProblem:
    """One fine/coarse covariance pair with its whitening factors.

    ``factor_i`` is the rank-truncated square root U_+ diag(sqrt(lambda_+))
    of the fine covariance; ``factor_j`` the rank-truncated inverse square
    root of the coarse one. With these, V abstracts the fine Gaussian
    exactly onto the coarse one iff A^T (B .* V) C has orthonormal columns.
    The SPD system solved by the V-update depends only on (A, C, B), so its
    Cholesky factor is computed once here and reused every iteration.
    """

    sigma_i: GaussianMeasure
    sigma_j: GaussianMeasure
    structure: StructureMatrix
    factor_i: np.ndarray = field(repr=False)
    factor_j: np.ndarray = field(repr=False)
    support_rows: np.ndarray = field(repr=False)
    support_cols: np.ndarray = field(repr=False)
    system_cho: np.ndarray = field(repr=False)
    system_lower: bool = field(repr=False)

    @property
    def d_fine(self) -> int:
        return self.structure.d_fine

    @property
    def d_coarse(self) -> int:
        return self.structure.d_coarse

    @property
    def rank_fine(self) -> int:
        return self.factor_i.shape[1]

    @property
    def rank_coarse(self) -> int:
        return self.factor_j.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return self.structure.entries


def build_local_problem(
    sigma_i: GaussianMeasure,
    sigma_j: GaussianMeasure,
    structure: StructureMatrix,
    rank_tol: float = RANK_TOL,
) -> LocalProblem:
    """Precompute whitening factors and the cached V-update system.

    Shapes must allow a solution: the fine rank may not be smaller than the
    coarse rank, otherwise no orthonormal whitened map exists and
    :class:`InfeasibleShapesError` is raised.
    """
    if structure.shape != (sigma_i.dim, sigma_j.dim):
        raise ValidationError(
            f"structure shape {structure.shape} != ({sigma_i.dim}, {sigma_j.dim})"
        )
    eig_i = eigendecompose(sigma_i.cov, rank_tol=rank_tol, clamp_tol=1e-8)
    eig_j = eigendecompose(sigma_j.cov, rank_tol=rank_tol, clamp_tol=1e-8)
    if eig_i.rank < eig_j.rank:
        raise InfeasibleShapesError(
            f"fine rank {eig_i.rank} below coarse rank {eig_j.rank}: no "
            "orthonormal abstraction can exist"
        )
    if eig_j.rank == 0:
        raise ValidationError("coarse covariance is zero")
    vals_i, vecs_i = eig_i.positive_part()
    vals_j, vecs_j = eig_j.positive_part()
    a = vecs_i * np.sqrt(vals_i)
    c = vecs_j / np.sqrt(vals_j)

    rows, cols = np.nonzero(structure.entries)
    # Row m of the support-restricted whitened operator is kron(C[col], A[row]).
    k_b = (c[cols][:, :, None] * a[rows][:, None, :]).reshape(rows.size, -1)
    system = np.eye(rows.size) + k_b @ k_b.T
    cho, lower = cho_factor(system)
    return LocalProblem(
        sigma_i=sigma_i,
        sigma_j=sigma_j,
        structure=structure,
        factor_i=a,
        factor_j=c,
        support_rows=rows,
        support_cols=cols,
        system_cho=cho,
        system_lower=lower,
    )


@dataclass(frozen=True)
class SolverState:
    """One iterate of the splitting recursion."""

    v: np.ndarray
    y: np.ndarray
    t: np.ndarray
    psi: np.ndarray
    upsilon: np.ndarray
    iteration: int = 0


def initial_state(problem: LocalProblem, rng=None) -> SolverState:
    """Masked-Stiefel random start: Y copies V, T is the projected whitened
    map, and both duals start at zero."""
    v0 = random_stiefel(problem.d_fine, problem.d_coarse, mask=problem.mask, rng=rng)
    t0 = _polar(problem.factor_i.T @ (problem.mask * v0) @ problem.factor_j)
    return SolverState(
        v=v0,
        y=v0.copy(),
        t=t0,
        psi=np.zeros_like(v0),
        upsilon=np.zeros_like(t0),
        iteration=0,
    )


def _polar(s: np.ndarray) -> np.ndarray:
    """Orthogonal polar factor, batched over any leading axes.

    Uses the Gram-eigendecomposition form S (S^T S)^{-1/2}; batch items whose
    Gram matrix is ill conditioned fall back to the SVD form, which also
    fills null directions deterministically.
    """
    single = s.ndim == 2
    ss = s[None] if single else s.reshape((-1,) + s.shape[-2:])
    gram = np.swapaxes(ss, -1, -2) @ ss
    w, q = np.linalg.eigh(gram)
    bad = w[:, 0] <= POLAR_FALLBACK_TOL * np.maximum(w[:, -1], 1e-300)
    w_safe = np.clip(w, 1e-300, None)
    out = ss @ (q * (1.0 / np.sqrt(w_safe))[:, None, :]) @ np.swapaxes(q, -1, -2)
    if np.any(bad):
        for idx in np.flatnonzero(bad):
            u, _, vt = np.linalg.svd(ss[idx], full_matrices=False)
            out[idx] = u @ vt
    return out[0] if single else out.reshape(s.shape)


def update_v(state: SolverState, problem: LocalProblem) -> np.ndarray:
    """Closed-form minimizer of the Lagrangian in V.

    Off-support entries are exactly zero; on the support, the stationarity
    system (I + K_B K_B^T) v_B = b_B is solved against the cached Cholesky
    factor, with b = Y - Psi + A (T - Upsilon) C^T restricted to the support.
    """
    return _v_update(state.y, state.psi, state.t, state.upsilon, problem)


def _v_update(y, psi, t, upsilon, problem: LocalProblem) -> np.ndarray:
    g = y - psi + problem.factor_i @ (t - upsilon) @ problem.factor_j.T
    b = g[..., problem.support_rows, problem.support_cols]
    flat = np.atleast_2d(b.reshape(-1, b.shape[-1]))
    sol = cho_solve((problem.system_cho, problem.system_lower), flat.T).T
    v = np.zeros(y.shape[:-2] + (problem.d_fine, problem.d_coarse))
    v[..., problem.support_rows, problem.support_cols] = sol.reshape(b.shape)
    return v


def update_y(state: SolverState, problem: LocalProblem) -> np.ndarray:
    """Stiefel projection of the masked V plus its dual: the polar factor."""
    return _y_update(state.v, state.psi, problem)


def _y_update(v, psi, problem: LocalProblem) -> np.ndarray:
    return _polar(problem.mask * v + psi)


def update_t(state: SolverState, problem: LocalProblem) -> np.ndarray:
    """Stiefel projection of the whitened map plus its dual."""
    return _t_update(state.v, state.upsilon, problem)


def _t_update(v, upsilon, problem: LocalProblem) -> np.ndarray:
    return _polar(_whitened(v, problem) + upsilon)


def _whitened(v, problem: LocalProblem) -> np.ndarray:
    return problem.factor_i.T @ (problem.mask * v) @ problem.factor_j


def update_duals(state: SolverState, problem: LocalProblem) -> tuple[np.ndarray, np.ndarray]:
    """Scaled dual ascent on both constraint gaps."""
    return _dual_update(state.v, state.y, state.t, state.psi, state.upsilon, problem)


def _dual_update(v, y, t, psi, upsilon, problem: LocalProblem):
    w = problem.mask * v
    return psi + w - y, upsilon + _whitened(v, problem) - t


def admm_step(state: SolverState, problem: LocalProblem) -> SolverState:
    """One full sweep: V, then Y, then T, then both duals."""
    v = update_v(state, problem)
    after_v = replace(state, v=v)
    y = update_y(after_v, problem)
    t = update_t(after_v, problem)
    psi, upsilon = _dual_update(v, y, t, state.psi, state.upsilon, problem)
    return SolverState(v=v, y=y, t=t, psi=psi, upsilon=upsilon, iteration=state.iteration + 1)


def augmented_lagrangian(v, y, t, psi, upsilon, problem: LocalProblem) -> float:
    """The splitting objective; the quantity the V-update minimizes in V."""
    w = problem.mask * v
    r1 = w - y + psi
    r2 = _whitened(v, problem) - t + upsilon
    return 0.5 * float(np.sum(r1 * r1) + np.sum(r2 * r2))


@dataclass(frozen=True)
class ResidualReport:
    """Frobenius norms of the four residuals and their thresholds."""

    primal_y: float
    primal_t: float
    dual_y: float
    dual_t: float
    threshold_primal_y: float
    threshold_primal_t: float
    threshold_dual_y: float
    threshold_dual_t: float

    @property
    def converged(self) -> bool:
        return (
            self.primal_y <= self.threshold_primal_y
            and self.primal_t <= self.threshold_primal_t
            and self.dual_y <= self.threshold_dual_y
            and self.dual_t <= self.threshold_dual_t
        )


def _norm(x) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=(-2, -1)))


def _residual_norms(y_prev, t_prev, v, y, t, psi, upsilon, problem, config):
    """Residual norms and thresholds, broadcasting over leading axes.

    Primal gaps compare the two splitting copies against the V block; dual
    gaps track the change of the Stiefel iterates mapped back through the
    constraint adjoints (masked identity, and masked A . C^T).
    """
    mask = problem.mask
    w = mask * v
    wh = _whitened(v, problem)
    rp1 = _norm(y - w)
    rp2 = _norm(t - wh)
    rd1 = _norm(mask * (y - y_prev))
    rd2 = _norm(mask * (problem.factor_i @ (t - t_prev) @ problem.factor_j.T))
    sq_dij = math.sqrt(problem.d_fine * problem.d_coarse)
    sq_rij = math.sqrt(problem.rank_fine * problem.rank_coarse)
    ta, tr = config.tau_abs, config.tau_rel
    e1 = ta * sq_dij + tr * np.maximum(_norm(y), _norm(w))
    e2 = ta * sq_rij + tr * np.maximum(_norm(t), _norm(wh))
    e3 = ta * sq_dij + tr * _norm(mask * psi)
    e4 = ta * sq_rij + tr * _norm(mask * (problem.factor_i @ upsilon @ problem.factor_j.T))
    return rp1, rp2, rd1, rd2, e1, e2, e3, e4


def residuals(
    state_prev: SolverState,
    state_curr: SolverState,
    problem: LocalProblem,
    config: SolverConfig,
) -> ResidualReport:
    vals = _residual_norms(
        state_prev.y,
        state_prev.t,
        state_curr.v,
        state_curr.y,
        state_curr.t,
        state_curr.psi,
        state_curr.upsilon,
        problem,
        config,
    )
    return ResidualReport(*(float(x) for x in vals))


@dataclass(frozen=True)
class TrialResult:
    """One restart's outcome.

    ``clca`` and ``kl`` are always filled from the trial's final iterate, so
    callers may score non-converged restarts too; ``accepted`` additionally
    requires residual convergence and the verification bound.
    """

    trial: int
    converged: bool
    iterations: int
    kl: float
    accepted: bool
    clca: Clca | None


@dataclass(frozen=True)
class SolveOutcome:
    converged: bool
    clca: Clca | None
    iterations: int
    trials_used: int
    final_kl: float
    trial_index: int | None
    trials: tuple[TrialResult, ...]


def _finalize_trial(v_final: np.ndarray, problem: LocalProblem, config: SolverConfig):
    """Project the converged iterate onto an exactly masked Stiefel map and
    score it; returns (clca, kl, accepted)."""
    w = problem.mask * polar_prox(problem.mask * v_final)
    clca = Clca(problem.structure, w)
    try:
        kl = kl_gaussian_abstracted(w.T, problem.sigma_i, problem.sigma_j)
    except ValidationError:
        return clca, math.inf, False
    accepted = kl <= config.kl_zero_tol and validate_clca(clca).valid
    return clca, kl, accepted


def _run_batch(
    problem: LocalProblem,
    config: SolverConfig,
    trial_indices: Sequence[int],
    stop_early: bool,
    trace_fn: Callable[[dict], None] | None,
) -> list[TrialResult]:
    nt = len(trial_indices)
    ids = np.array(trial_indices)
    v = np.stack(
        [
            random_stiefel(
                problem.d_fine,
                problem.d_coarse,
                mask=problem.mask,
                rng=np.random.default_rng(config.rng_seed ^ t),
            )
            for t in trial_indices
        ]
    )
    y = v.copy()
    t_var = _polar(_whitened(v, problem))
    psi = np.zeros_like(v)
    ups = np.zeros_like(t_var)

    results: dict[int, TrialResult] = {}
    best_accepted: int | None = None
    k = 0
    for k in range(1, config.max_iters + 1):
        y_prev, t_prev = y, t_var
        v = _v_update(y, psi, t_var, ups, problem)
        y = _y_update(v, psi, problem)
        t_var = _t_update(v, ups, problem)
        psi, ups = _dual_update(v, y, t_var, psi, ups, problem)
        rp1, rp2, rd1, rd2, e1, e2, e3, e4 = _residual_norms(
            y_prev, t_prev, v, y, t_var, psi, ups, problem, config
        )
        if trace_fn is not None:
            for i, trial in enumerate(ids):
                trace_fn(
                    {
                        "iteration": k,
                        "trial": int(trial),
                        "primal_y": float(rp1[i]),
                        "primal_t": float(rp2[i]),
                        "dual_y": float(rd1[i]),
                        "dual_t": float(rd2[i]),
                        "threshold_primal_y": float(e1[i]),
                        "threshold_primal_t": float(e2[i]),
                        "threshold_dual_y": float(e3[i]),
                        "threshold_dual_t": float(e4[i]),
                    }
                )
        conv = (rp1 <= e1) & (rp2 <= e2) & (rd1 <= e3) & (rd2 <= e4)
        if np.any(conv):
            for i in np.flatnonzero(conv):
                trial = int(ids[i])
                clca, kl, accepted = _finalize_trial(v[i], problem, config)
                results[trial] = TrialResult(trial, True, k, kl, accepted, clca)
                if accepted and (best_accepted is None or trial < best_accepted):
                    best_accepted = trial
            keep = ~conv
            ids = ids[keep]
            v, y, t_var, psi, ups = v[keep], y[keep], t_var[keep], psi[keep], ups[keep]
            if ids.size == 0:
                break
            if stop_early and best_accepted is not None and best_accepted < int(ids.min()):
                break
    for i, trial in enumerate(ids):
        clca, kl, _ = _finalize_trial(v[i], problem, config)
        results[int(trial)] = TrialResult(int(trial), False, k, kl, False, clca)
    return [results[t] for t in trial_indices if t in results]


def solve(
    problem: LocalProblem,
    config: SolverConfig,
    select: str = "first",
    trace_fn: Callable[[dict], None] | None = None,
) -> SolveOutcome:
    """Run restarted ADMM until a trial converges and verifies.

    ``select="first"`` returns the accepted trial with the lowest index (the
    restart order is what a sequential run would use) and stops as soon as
    no earlier trial can still win. ``select="best"`` runs every restart and
    returns the accepted trial with the smallest verification divergence.
    A converged trial whose divergence exceeds ``config.kl_zero_tol`` is
    rejected but still counts against the restart budget.
    """
    if select not in ("first", "best"):
        raise ValidationError(f"unknown selection rule {select!r}")
    stop_early = select == "first"
    all_results: list[TrialResult] = []
    for start in range(0, config.ntrials, config.chunk_size):
        indices = list(range(start, min(start + config.chunk_size, config.ntrials)))
        all_results.extend(_run_batch(problem, config, indices, stop_early, trace_fn))
        if stop_early and any(r.accepted for r in all_results):
            break
    accepted = [r for r in all_results if r.accepted]
    if not accepted:
        return SolveOutcome(
            converged=False,
            clca=None,
            iterations=config.max_iters,
            trials_used=config.ntrials,
            final_kl=math.inf,
            trial_index=None,
            trials=tuple(all_results),
        )
    if select == "first":
        winner = min(accepted, key=lambda r: r.trial)
        trials_used = winner.trial + 1
    else:
        winner = min(accepted, key=lambda r: (r.kl, r.trial))
        trials_used = config.ntrials
    return SolveOutcome(
        converged=True,
        clca=winner.clca,
        iterations=winner.iterations,
        trials_used=trials_used,
        final_kl=winner.kl,
        trial_index=winner.trial,
        trials=tuple(all_results),
    )
