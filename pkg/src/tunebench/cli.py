"""Command line front end.

Subcommands: run a suite, export a tabular instance, fit a surrogate
instance, analyze a results directory, and list the built-in suites.
Usage errors exit 2 (argparse's native behavior); runtime failures print
to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from . import instances, runner


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tunebench",
                                description="Benchmark harness for hyperparameter optimizers.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a benchmark suite")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--suite", choices=sorted(runner.SUITES),
                     help="built-in suite name")
    src.add_argument("--spec", help="path to a suite spec JSON file")
    run.add_argument("--seed", type=int, help="master seed override")
    run.add_argument("--reps", type=int, help="replications override")
    run.add_argument("--out", help="output directory override")
    run.add_argument("--workers", type=int, default=1,
                     help="parallel cell workers (default 1)")
    run.add_argument("--mode", choices=runner.MODES,
                     help="keep only cells with this mode")
    run.add_argument("--optimizers",
                     help="comma-separated optimizer ids to keep")

    tab = sub.add_parser("tabulate", help="export a tabular instance file")
    tab.add_argument("--instance", required=True, help="registry instance id")
    tab.add_argument("--cap", type=int, default=10_000,
                     help="max non-budget grid points (default 10000)")
    tab.add_argument("--out", required=True, help="output .tbi path")

    fit = sub.add_parser("fit-surrogate", help="fit and export a surrogate instance")
    fit.add_argument("--instance", required=True, help="registry instance id")
    fit.add_argument("--n-train", type=int, default=10_000,
                     help="training sample size (default 10000)")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", required=True, help="output .sgi path")

    an = sub.add_parser("analyze", help="compute statistics from a results directory")
    an.add_argument("--in", dest="in_dir", required=True, help="results directory")
    an.add_argument("--out", dest="out_dir", required=True, help="analysis output directory")
    an.add_argument("--fraction", type=float, default=1.0,
                    help="budget fraction for ranking (default 1.0)")
    an.add_argument("--consensus", action="store_true",
                    help="compute per-mode Kemeny consensus")
    an.add_argument("--reference", help="mode whose consensus anchors distances")

    suite = sub.add_parser("suite", help="suite utilities")
    suite.add_argument("action", choices=["list"])
    return p


def _cmd_run(args) -> int:
    if args.suite is not None:
        spec = runner.SUITES[args.suite]()
    else:
        spec = runner.load_suite_file(args.spec)
    if args.seed is not None:
        spec.master_seed = args.seed
    if args.reps is not None:
        spec.replications = args.reps
    if args.out is not None:
        spec.out_dir = args.out
    if args.mode is not None:
        spec.cells = tuple(c for c in spec.cells if c.mode == args.mode)
    if args.optimizers is not None:
        keep = tuple(s.strip() for s in args.optimizers.split(",") if s.strip())
        spec.cells = tuple(dataclasses.replace(c, optimizers=keep) for c in spec.cells)
    if not spec.cells:
        raise runner.SuiteError("no cells left after filtering")
    manifest = runner.run_suite(spec, workers=args.workers)
    n_rows = sum(c["n_rows"] for c in manifest["cells"])
    print(f"suite {spec.name}: {len(manifest['cells'])} cells, {n_rows} rows, "
          f"{len(manifest['failures'])} failures, "
          f"{manifest['wall_time_seconds']}s -> {spec.out_dir}")
    return 1 if manifest["failures"] else 0


def _cmd_tabulate(args) -> int:
    reg = instances.registry()
    if args.instance not in reg:
        raise runner.SuiteError(f"unknown instance id {args.instance!r}")
    inst = instances.make_tabular_instance(reg[args.instance](), args.cap)
    instances.save_instance(inst, args.out)
    tab = inst.evaluator
    print(f"{inst.id}: {len(tab.grid)} rows -> {args.out}")
    return 0


def _cmd_fit_surrogate(args) -> int:
    reg = instances.registry()
    if args.instance not in reg:
        raise runner.SuiteError(f"unknown instance id {args.instance!r}")
    inst = instances.make_surrogate_instance(reg[args.instance](), args.n_train,
                                             seed=args.seed)
    instances.save_instance(inst, args.out)
    q = inst.quality
    rhos = ", ".join("degenerate" if r is None else f"{r:.4f}" for r in q.rho)
    verdict = "ok" if q.faithful else "below threshold"
    print(f"{inst.id}: spearman [{rhos}] on {q.n_test} held-out points "
          f"({q.n_train} train) -> {verdict}")
    print(f"written to {args.out}")
    return 0


def _cmd_analyze(args) -> int:
    report = runner.analyze_results(args.in_dir, args.out_dir,
                                    fraction=args.fraction,
                                    consensus=args.consensus or args.reference is not None,
                                    reference=args.reference)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _cmd_suite(args) -> int:
    for name in sorted(runner.SUITES):
        spec = runner.SUITES[name]()
        print(f"{name:<14} {spec.version:<6} cells={len(spec.cells):<3} "
              f"reps={spec.replications}")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "tabulate": _cmd_tabulate,
                "fit-surrogate": _cmd_fit_surrogate, "analyze": _cmd_analyze,
                "suite": _cmd_suite}
    try:
        return handlers[args.command](args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
