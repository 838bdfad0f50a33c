"""Network structure recovery from a sorted collection of covariances.

The search walks the subdiagonals of a strictly lower triangular candidate
matrix: entry (r, c) with r > c says the coarser model r may abstract the
finer model c. Candidates are prefiltered with the spectral interlacing
test, closed transitively after each subdiagonal (abstractions compose), and
the surviving pairs are sent to the feasibility solver. Solver-confirmed
relations are again closed so implied pairs are never solved; their maps are
materialized by composing the confirmed ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .clca import Clca, StructureMatrix, compose_clca, interlacing_check
from .errors import CycleError, ValidationError
from .measures import GaussianMeasure
from .solver import SolverConfig, build_local_problem, solve


def transitive_closure(m: np.ndarray) -> np.ndarray:
    """Reachability closure of a binary relation matrix."""
    reach = np.asarray(m, dtype=bool).copy()
    if reach.ndim != 2 or reach.shape[0] != reach.shape[1]:
        raise ValidationError(f"expected a square matrix, got {reach.shape}")
    while True:
        nxt = reach | (reach @ reach)
        if np.array_equal(nxt, reach):
            return nxt
        reach = nxt


def transitive_reduction(m: np.ndarray) -> np.ndarray:
    """Minimal relation with the same closure; input must be acyclic.

    An arc (r, c) is dropped exactly when some intermediate m links c to r
    through the closure.
    """
    arcs = np.asarray(m, dtype=bool)
    closure = transitive_closure(arcs)
    if closure.diagonal().any():
        raise CycleError("relation contains a cycle; reduction undefined")
    redundant = closure @ closure
    return arcs & ~redundant


@dataclass(frozen=True)
class CandidateMatrix:
    """Strictly lower triangular matrix of spectrally admissible pairs,
    closed under composition."""

    p: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.p, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValidationError(f"expected a square matrix, got {arr.shape}")
        if np.triu(arr).any():
            raise ValidationError("candidates must be strictly lower triangular")
        object.__setattr__(self, "p", arr)

    @property
    def n(self) -> int:
        return self.p.shape[0]

    def pairs(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.p)
        return list(zip(rows.tolist(), cols.tolist()))


def _require_sorted(measures: Sequence[GaussianMeasure]) -> None:
    dims = [m.dim for m in measures]
    if any(dims[i] < dims[i + 1] for i in range(len(dims) - 1)):
        raise ValidationError(f"measures must be sorted by descending dimension, got {dims}")


def build_candidates(
    measures: Sequence[GaussianMeasure],
    slack_tol: float | None = None,
) -> CandidateMatrix:
    """Subdiagonal sweep of the interlacing test with transitive closure.

    Entries already implied by the closure of earlier subdiagonals are not
    retested; because interlacing is preserved under composition through an
    intermediate spectrum, the result equals brute-force all-pairs testing
    followed by closure.
    """
    _require_sorted(measures)
    n = len(measures)
    p = np.zeros((n, n), dtype=bool)
    for offset in range(1, n):
        for c in range(n - offset):
            r = c + offset
            if p[r, c]:
                continue
            if interlacing_check(measures[c], measures[r], slack_tol):
                p[r, c] = True
        p = transitive_closure(p)
    return CandidateMatrix(p)


@dataclass(frozen=True)
class PairDecision:
    status: str  # confirmed | implied-by-closure | solver-failed | interlacing-failed | infeasible
    trials_used: int = 0
    final_kl: float = math.nan
    iterations: int = 0


@dataclass(frozen=True)
class LearnedAdjacency:
    """Confirmed abstraction relations plus the maps realizing them.

    ``a`` is the transitive reduction of the solver-confirmed relations;
    ``maps`` also carries composed maps for every implied (closure) pair;
    ``decisions`` records one provenance entry per candidate pair.
    """

    a: np.ndarray
    maps: dict[tuple[int, int], Clca] = field(default_factory=dict)
    decisions: dict[tuple[int, int], PairDecision] = field(default_factory=dict)

    @property
    def closure(self) -> np.ndarray:
        return transitive_closure(self.a)


def _compose_along_path(
    confirmed: np.ndarray, maps: dict, r: int, c: int
) -> Clca:
    """Compose confirmed edge maps along any path from fine c up to coarse r."""
    # BFS over confirmed arcs (m, c): c -> m with m > c.
    n = confirmed.shape[0]
    parent: dict[int, int] = {}
    frontier = [c]
    seen = {c}
    while frontier:
        nxt = []
        for u in frontier:
            for m in range(u + 1, n):
                if confirmed[m, u] and m not in seen:
                    parent[m] = u
                    if m == r:
                        frontier = []
                        nxt = []
                        break
                    seen.add(m)
                    nxt.append(m)
        frontier = nxt
    if r not in parent:
        raise ValidationError(f"no confirmed path from {c} to {r}")
    hops = [r]
    while hops[-1] != c:
        hops.append(parent[hops[-1]])
    hops.reverse()  # c, ..., r
    out = maps[(hops[0], hops[1])]
    for a, b in zip(hops[1:], hops[2:]):
        out = compose_clca(out, maps[(a, b)])
    return out


def _edge_seed(base_seed: int, r: int, c: int) -> int:
    ss = np.random.SeedSequence([int(base_seed), r, c])
    return int(ss.generate_state(1, np.uint32)[0])


def learn_can(
    measures: Sequence[GaussianMeasure],
    structures: Mapping[tuple[int, int], StructureMatrix],
    config: SolverConfig,
    slack_tol: float | None = None,
    force_solve_implied: bool = False,
    progress_fn: Callable[[dict], None] | None = None,
) -> LearnedAdjacency:
    """Recover the abstraction relations among sorted covariances.

    ``structures`` maps (fine index, coarse index) pairs to their known
    block structures; one must be present for every candidate pair the
    sweep reaches. Solver failures mark the pair and never abort the sweep.
    ``force_solve_implied`` re-solves pairs that the closure already implies
    instead of composing their maps (slower; for verification studies).
    """
    _require_sorted(measures)
    n = len(measures)
    candidates = build_candidates(measures, slack_tol)
    confirmed = np.zeros((n, n), dtype=bool)
    maps: dict[tuple[int, int], Clca] = {}
    decisions: dict[tuple[int, int], PairDecision] = {}

    for offset in range(1, n):
        for c in range(n - offset):
            r = c + offset
            if not candidates.p[r, c]:
                decisions[(r, c)] = PairDecision("interlacing-failed")
                continue
            if not force_solve_implied and transitive_closure(confirmed)[r, c]:
                maps[(c, r)] = _compose_along_path(confirmed, maps, r, c)
                decisions[(r, c)] = PairDecision("implied-by-closure")
            else:
                key = (c, r)
                if key not in structures:
                    raise ValidationError(f"no structure provided for pair {key}")
                try:
                    problem = build_local_problem(
                        measures[c], measures[r], structures[key]
                    )
                except ValidationError:
                    decisions[(r, c)] = PairDecision("infeasible")
                    continue
                cfg = SolverConfig(
                    tau_abs=config.tau_abs,
                    tau_rel=config.tau_rel,
                    max_iters=config.max_iters,
                    ntrials=config.ntrials,
                    rng_seed=_edge_seed(config.rng_seed, r, c),
                    kl_zero_tol=config.kl_zero_tol,
                    chunk_size=config.chunk_size,
                )
                outcome = solve(problem, cfg, select="first")
                if outcome.converged:
                    confirmed[r, c] = True
                    maps[key] = outcome.clca
                    decisions[(r, c)] = PairDecision(
                        "confirmed", outcome.trials_used, outcome.final_kl, outcome.iterations
                    )
                else:
                    decisions[(r, c)] = PairDecision("solver-failed", outcome.trials_used)
            if progress_fn is not None:
                d = decisions[(r, c)]
                progress_fn(
                    {
                        "fine": c,
                        "coarse": r,
                        "decision": d.status,
                        "trials_used": d.trials_used,
                        "final_kl": d.final_kl,
                    }
                )
    return LearnedAdjacency(transitive_reduction(confirmed), maps, decisions)


def fpr_tpr(learned: LearnedAdjacency, truth_closure: np.ndarray) -> tuple[float, float]:
    """False/true positive rates of the learned closure against the true one,
    over the strictly lower triangular index set.

    Empty denominators follow the usual conventions: no true negatives gives
    a false positive rate of 0, no true positives to find gives a true
    positive rate of 1.
    """
    truth = np.asarray(truth_closure, dtype=bool)
    pred = learned.closure
    if truth.shape != pred.shape:
        raise ValidationError(f"shapes differ: {truth.shape} vs {pred.shape}")
    rows, cols = np.tril_indices(truth.shape[0], k=-1)
    t = truth[rows, cols]
    p = pred[rows, cols]
    fp = int(np.count_nonzero(p & ~t))
    tn = int(np.count_nonzero(~p & ~t))
    tp = int(np.count_nonzero(p & t))
    fn = int(np.count_nonzero(~p & t))
    fpr = 0.0 if fp + tn == 0 else fp / (fp + tn)
    tpr = 1.0 if tp + fn == 0 else tp / (tp + fn)
    return fpr, tpr
