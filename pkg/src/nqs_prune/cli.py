"""Command-line interface.

    nqs-prune prune   --preset fig3-4x4 --seed 7 --output-dir runs/a
    nqs-prune ticket  --variant theta-rand-m-imp --from runs/a --iteration 18
    nqs-prune oracle  --model tfim --L 4 --kappa 3.04438
    nqs-prune observe --from runs/a --iteration 12
    nqs-prune export  --from runs/a > curves.csv
    nqs-prune resume  --from runs/a

Exit codes: 0 success, 1 validation error, 2 numerical failure (a
checkpoint of the last finite state is kept), 3 resume refusal.
The NQS_THREADS environment variable overrides --threads.
"""

from __future__ import annotations

import argparse
import json
import sys

from .perf import resolve_threads, tune_process


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a key=value config file")
    p.add_argument("--preset", help="name of a built-in hyperparameter preset")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--output-dir", help="run directory for artifacts")
    p.add_argument("--threads", type=int, default=1, help="BLAS thread count (default 1; NQS_THREADS overrides)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nqs-prune", description="Variational Monte Carlo with iterative magnitude pruning")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prune", help="run an iterative pruning experiment")
    _common_flags(p)

    p = sub.add_parser("ticket", help="train a lottery ticket from a stored run")
    _common_flags(p)
    p.add_argument("--from", dest="source", required=True, help="source pruning run directory")
    p.add_argument("--variant", required=True, help="theta-init-m-imp | theta-rand-m-imp | theta-init-m-rand")
    p.add_argument("--iteration", type=int, required=True)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--use-rewind-init", action="store_true", help="initialize from the rewind point instead of theta_init")

    p = sub.add_parser("oracle", help="exact ground energy for a model instance")
    _common_flags(p)
    p.add_argument("--model", choices=("tfim", "toric"), required=True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--kappa", type=float, default=3.04438)
    p.add_argument("--boundary", choices=("open", "periodic"), default="open")
    p.add_argument("--method", choices=("auto", "lanczos", "dense", "analytic"), default="auto")

    p = sub.add_parser("observe", help="sampled observables for a stored checkpoint")
    _common_flags(p)
    p.add_argument("--from", dest="source", required=True)
    p.add_argument("--iteration", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--n-samples", type=int)

    p = sub.add_parser("export", help="export the per-iteration metrics as CSV")
    _common_flags(p)
    p.add_argument("--from", dest="source", required=True)
    p.add_argument("--out", help="output file (default stdout)")

    p = sub.add_parser("resume", help="continue a partial run")
    _common_flags(p)
    p.add_argument("--from", dest="source", required=True)
    return parser


def _build_config(args):
    from .runconfig import ConfigError, load_config, preset_config

    if bool(args.config) == bool(args.preset):
        raise ConfigError(["exactly one of --config or --preset is required"])
    cfg = preset_config(args.preset) if args.preset else load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.output_dir is not None:
        from dataclasses import replace

        cfg = replace(cfg, output_dir=args.output_dir)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    tune_process(resolve_threads(args.threads))

    from .runconfig import ConfigError
    from .runner import NumericalFailure, ResumeRefusal

    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ResumeRefusal as exc:
        print(f"resume refused: {exc}", file=sys.stderr)
        return 3


def _dispatch(args) -> int:
    from . import runner

    if args.command == "prune":
        cfg = _build_config(args)
        artifacts = runner.run(cfg)
        print(f"{artifacts.status}: {len(artifacts.metrics)} iterations in {artifacts.run_dir}")
        return 0

    if args.command == "ticket":
        metrics, out = runner.run_ticket(
            args.source,
            args.variant.replace("-", "_"),
            args.iteration,
            seed=args.seed if args.seed is not None else 0,
            steps=args.steps,
            output_dir=args.output_dir,
            use_rewind_init=args.use_rewind_init,
        )
        print(json.dumps(metrics.to_row()))
        return 0

    if args.command == "oracle":
        return _oracle_cmd(args)

    if args.command == "observe":
        out = runner.observe_run(args.source, iteration=args.iteration, checkpoint=args.checkpoint,
                                 n_samples=args.n_samples, seed=args.seed if args.seed is not None else 0)
        print(json.dumps(out, sort_keys=True))
        return 0

    if args.command == "export":
        if args.out:
            with open(args.out, "w", encoding="utf-8") as f:
                rows, skipped = runner.export_curves(args.source, f)
        else:
            rows, skipped = runner.export_curves(args.source, sys.stdout)
        if skipped:
            print(f"warning: skipped {skipped} corrupt metrics row(s)", file=sys.stderr)
        return 0

    if args.command == "resume":
        artifacts = runner.resume(args.source)
        print(f"{artifacts.status}: {len(artifacts.metrics)} iterations in {artifacts.run_dir}")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


def _oracle_cmd(args) -> int:
    from . import oracle
    from .hamiltonian import ToricCode, TransverseFieldIsing
    from .lattice import SquareLattice, ToricLattice

    if args.model == "toric":
        if args.method in ("auto", "analytic"):
            sol = oracle.ExactSolution(oracle.toric_ground_energy(args.L), "analytic", 2 * args.L**2)
        else:
            ham = ToricCode(ToricLattice(args.L))
            sol = oracle.lanczos_ground_energy(ham) if args.method == "lanczos" else oracle.dense_ground_energy(ham)
    else:
        ham = TransverseFieldIsing(SquareLattice(args.L, args.boundary), args.kappa)
        if args.method == "analytic":
            raise ValueError("no analytic solution for the TFIM; use lanczos or dense")
        if args.method == "dense":
            sol = oracle.dense_ground_energy(ham)
        else:
            sol = oracle.lanczos_ground_energy(ham)
    print(json.dumps({"model": args.model, "N": sol.n_spins, "method": sol.method, "energy": sol.energy}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
