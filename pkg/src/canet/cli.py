"""Command-line interface.

Subcommands cover instance generation (gen-local, gen-can), the two
benchmark suites (bench-local, bench-can), single-pair tooling (check,
learn-edge), structure learning (learn-can), and network analysis
(invariants, diffuse, smoothness). Exit codes: 0 success, 1 validation
error, 2 when convergence was required but not reached.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, canio
from .clca import interlacing_check, validate_clca
from .diffusion import WeightProfile, ZeroCochain, iterate_dynamics
from .errors import ValidationError
from .measures import GaussianMeasure
from .network import (
    adjacency,
    check_consistency,
    degree,
    incidence,
    kernel_multiplicity,
    laplacian,
)
from .network import smoothness as network_smoothness
from .search import fpr_tpr, learn_can
from .solver import SolverConfig, build_local_problem, solve
from .synth import gen_can_instance, gen_local_instance

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NOT_CONVERGED = 2


def _solver_config(args, default_tau: float, default_ntrials: int) -> SolverConfig:
    return SolverConfig(
        tau_abs=args.tau_a if args.tau_a is not None else default_tau,
        tau_rel=args.tau_r if args.tau_r is not None else default_tau,
        max_iters=args.max_iters,
        ntrials=args.ntrials if args.ntrials is not None else default_ntrials,
        rng_seed=args.seed,
        kl_zero_tol=args.kl_zero_tol,
    )


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ntrials", type=int, default=None, help="restart budget")
    p.add_argument("--tau-a", type=float, default=None, help="absolute residual tolerance")
    p.add_argument("--tau-r", type=float, default=None, help="relative residual tolerance")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--kl-zero-tol", type=float, default=1e-3, help="verification divergence bound")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_local(args) -> int:
    out = _out_dir(args)
    for idx in range(args.count):
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, idx]))
        instance = gen_local_instance(args.ell, args.coarse_dim, rng)
        canio.save_json(canio.local_instance_to_dict(instance), out / f"local_{idx:04d}.json")
    print(f"wrote {args.count} instances to {out}")
    return EXIT_OK


def cmd_gen_can(args) -> int:
    out = _out_dir(args)
    for idx in range(args.count):
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, idx]))
        instance = gen_can_instance(args.topology, args.nodes, args.dim_lo, args.dim_hi, rng)
        canio.save_json(canio.can_instance_to_dict(instance), out / f"can_{idx:04d}.json")
    print(f"wrote {args.count} instances to {out}")
    return EXIT_OK


def _parse_shapes(text: str) -> tuple[tuple[int, int], ...]:
    shapes = []
    for token in text.split(","):
        ell, _, h = token.strip().partition("x")
        shapes.append((int(ell), int(h)))
    return tuple(shapes)


def cmd_bench_local(args) -> int:
    cfg = bench.LocalBenchConfig(
        shapes=_parse_shapes(args.shapes),
        n_instances=args.instances,
        ntrials=args.ntrials if args.ntrials is not None else 50,
        tau_abs=args.tau_a if args.tau_a is not None else 1e-4,
        tau_rel=args.tau_r if args.tau_r is not None else 1e-4,
        max_iters=args.max_iters,
        kl_zero_tol=args.kl_zero_tol,
        rng_seed=args.seed,
        n_jobs=args.jobs,
    )
    report = bench.run_local_benchmark(cfg)
    out = _out_dir(args)
    report.write_csv(out / "local_bench.csv")
    report.write_summary(out / "local_bench_summary.json")
    print(json.dumps(report.aggregates, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_bench_can(args) -> int:
    cfg = bench.CanBenchConfig(
        topologies=tuple(t.strip() for t in args.topologies.split(",")),
        n_nodes=args.nodes,
        dim_lo=args.dim_lo,
        dim_hi=args.dim_hi,
        n_instances=args.instances,
        ntrials_grid=tuple(int(t) for t in args.ntrials_grid.split(",")),
        tau_abs=args.tau_a if args.tau_a is not None else 1e-3,
        tau_rel=args.tau_r if args.tau_r is not None else 1e-3,
        max_iters=args.max_iters,
        kl_zero_tol=args.kl_zero_tol,
        rng_seed=args.seed,
        n_jobs=args.jobs,
    )
    report = bench.run_can_benchmark(cfg)
    out = _out_dir(args)
    report.write_csv(out / "can_bench.csv")
    report.write_summary(out / "can_bench_summary.json")
    print(json.dumps(report.aggregates, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_check(args) -> int:
    fine = canio.load_covariance(args.sigma_l)
    coarse = canio.load_covariance(args.sigma_h)
    ok = interlacing_check(fine, coarse, args.slack_tol)
    print("compatible" if ok else "incompatible")
    return EXIT_OK


def cmd_learn_edge(args) -> int:
    instance = canio.local_instance_from_dict(canio._load(args.instance))
    problem = build_local_problem(instance.sigma_l, instance.sigma_h, instance.truth.structure)
    cfg = _solver_config(args, default_tau=1e-4, default_ntrials=50)
    trace_fn = None
    trace_rows: list[dict] = []
    if args.verbose:
        trace_fn = trace_rows.append
    outcome = solve(problem, cfg, trace_fn=trace_fn)
    if args.verbose:
        for row in trace_rows:
            print(json.dumps(row), file=sys.stderr)
    if not outcome.converged:
        print(f"not converged within {cfg.ntrials} restarts")
        return EXIT_NOT_CONVERGED
    print(
        f"converged: trial={outcome.trial_index} iterations={outcome.iterations} "
        f"kl={outcome.final_kl:.3e}"
    )
    if args.out:
        canio.save_json(
            {
                "kind": "learned_map",
                "structure": outcome.clca.structure.entries.tolist(),
                "weights": outcome.clca.weights.tolist(),
                "final_kl": outcome.final_kl,
                "iterations": outcome.iterations,
                "trials_used": outcome.trials_used,
            },
            args.out,
        )
    return EXIT_OK


def cmd_learn_can(args) -> int:
    instance = canio.can_instance_from_dict(canio._load(args.instance))
    n = instance.can.n_nodes
    measures = [instance.can.nodes[i].measure for i in range(n)]
    cfg = _solver_config(args, default_tau=1e-3, default_ntrials=100)
    progress = (lambda row: print(json.dumps(row), file=sys.stderr)) if args.verbose else None
    learned = learn_can(measures, instance.structures, cfg, progress_fn=progress)
    fpr, tpr = fpr_tpr(learned, instance.truth_closure)
    print(f"fpr={fpr:.4f} tpr={tpr:.4f}")
    if args.out:
        canio.save_json(
            {
                "kind": "learned_can",
                "adjacency": learned.a.astype(int).tolist(),
                "closure": learned.closure.astype(int).tolist(),
                "fpr": fpr,
                "tpr": tpr,
                "decisions": {
                    f"{r},{c}": d.status for (r, c), d in sorted(learned.decisions.items())
                },
            },
            args.out,
        )
    return EXIT_OK


def cmd_invariants(args) -> int:
    can = canio.deserialize_can(args.can)
    lap = laplacian(can)
    doc = {
        "kind": "invariants",
        "node_ids": list(can.node_ids),
        "dims": list(can.dims),
        "adjacency": adjacency(can).dense.tolist(),
        "degree": degree(can).dense.tolist(),
        "incidence": incidence(can).dense.tolist(),
        "laplacian": lap.dense.tolist(),
        "kernel_multiplicity": kernel_multiplicity(can),
        "consistent": check_consistency(can).consistent,
    }
    if args.out:
        canio.save_json(doc, args.out)
    else:
        print(json.dumps(doc))
    return EXIT_OK


def cmd_diffuse(args) -> int:
    can = canio.deserialize_can(args.can)
    chi = ZeroCochain.from_gaussians(can.measures())
    profile = WeightProfile(
        edge_mix=args.edge_mix, dynamics_mix=args.dynamics_mix, prune_tol=args.prune_tol
    )
    sink = open(args.out, "w") if args.out else sys.stdout
    try:
        for step, state in iterate_dynamics(can, chi, args.steps, profile):
            for node in can.nodes:
                mix = state[node.id]
                record = {
                    "step": step,
                    "node": node.id,
                    "n_components": len(mix.components),
                    "traces": [float(np.trace(m.cov)) for _, m in mix.components],
                }
                print(json.dumps(record), file=sink)
    finally:
        if args.out:
            sink.close()
    return EXIT_OK


def cmd_smoothness(args) -> int:
    can = canio.deserialize_can(args.can)
    report = network_smoothness(can, can.measures())
    doc = {
        "kind": "smoothness",
        "total": report.total,
        "per_edge": {f"{f},{c}": v for (f, c), v in sorted(report.per_edge.items())},
        "failures": {f"{f},{c}": msg for (f, c), msg in sorted(report.failures.items())},
    }
    if args.out:
        canio.save_json(doc, args.out)
    else:
        print(json.dumps(doc, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canet",
        description="Causal abstraction networks: generation, learning, analysis.",
    )
    parser.add_argument("--verbose", action="store_true", help="emit per-step records to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-local", help="generate planted local instances")
    p.add_argument("--ell", type=int, default=12, help="fine dimension")
    p.add_argument("--coarse-dim", type=int, default=2, help="coarse dimension")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_local)

    p = sub.add_parser("gen-can", help="generate ground-truth network instances")
    p.add_argument("--topology", choices=("chain", "star", "tree"), default="chain")
    p.add_argument("--nodes", type=int, default=10)
    p.add_argument("--dim-lo", type=int, default=2)
    p.add_argument("--dim-hi", type=int, default=20)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_can)

    p = sub.add_parser("bench-local", help="run the planted-map recovery suite")
    p.add_argument("--shapes", default="12x2,12x4,12x6")
    p.add_argument("--instances", type=int, default=30)
    _add_solver_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_local)

    p = sub.add_parser("bench-can", help="run the structure recovery suite")
    p.add_argument("--topologies", default="chain,star,tree")
    p.add_argument("--nodes", type=int, default=10)
    p.add_argument("--dim-lo", type=int, default=2)
    p.add_argument("--dim-hi", type=int, default=20)
    p.add_argument("--instances", type=int, default=30)
    p.add_argument("--ntrials-grid", default="10,100")
    _add_solver_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_can)

    p = sub.add_parser("check", help="spectral compatibility of two covariance files")
    p.add_argument("sigma_l")
    p.add_argument("sigma_h")
    p.add_argument("--slack-tol", type=float, default=None)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("learn-edge", help="recover the map of one local instance")
    p.add_argument("instance")
    _add_solver_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_learn_edge)

    p = sub.add_parser("learn-can", help="recover network structure from an instance file")
    p.add_argument("instance")
    _add_solver_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_learn_can)

    p = sub.add_parser("invariants", help="emit block matrices and kernel multiplicity")
    p.add_argument("can")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_invariants)

    p = sub.add_parser("diffuse", help="run the retention dynamics and log the trajectory")
    p.add_argument("can")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--edge-mix", type=float, default=0.5)
    p.add_argument("--dynamics-mix", type=float, default=0.5)
    p.add_argument("--prune-tol", type=float, default=0.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_diffuse)

    p = sub.add_parser("smoothness", help="edgewise divergence of the stored measures")
    p.add_argument("can")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_smoothness)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
