"""Suite orchestration: the budget formula, seed derivation, cell execution
over the three benchmark modes, CSV/manifest persistence, and the analyze
pipeline the CLI exposes.

Result CSVs are canonical-sorted and use repr() for floats, so reruns with
one master seed are byte-identical; the manifest carries wall time and is
the one file allowed to differ.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, analysis, instances
from .optim_mo import HVContext, MO_OPTIMIZERS
from .optim_so import OPTIMIZERS as SO_OPTIMIZERS
from .optim_so import Trajectory
from .instances import EvalRecord
from .space import Configuration, SearchSpace

log = logging.getLogger(__name__)

ARTIFACT_VERSION = "tunebench-results-1"
MODES = ("real", "tabular", "surrogate")
RESULT_COLUMNS = ("suite", "instance", "mode", "optimizer", "replication",
                  "iteration", "cumulative_budget", "objectives", "best_so_far")

ALL_OPTIMIZERS = {**SO_OPTIMIZERS, **MO_OPTIMIZERS}


class SuiteError(ValueError):
    pass


def budget_for(space: SearchSpace) -> int:
    """ceil(20 + 40*sqrt(D)) full-fidelity evaluations, D excluding the
    budget parameter."""
    if space.dim < 1:
        raise SuiteError("space has no non-budget parameters")
    return math.ceil(20.0 + 40.0 * math.sqrt(space.dim))


def derive_seed(master_seed: int, instance: str, mode: str, optimizer: str,
                replication: int) -> int:
    """Stable 63-bit stream id for one run, split from the master seed."""
    text = f"{master_seed}|{instance}|{mode}|{optimizer}|{replication}"
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") % 2 ** 63


@dataclass(frozen=True)
class CellSpec:
    instance: str
    mode: str
    optimizers: tuple[str, ...]
    targets: tuple[str, ...] = ()
    tabular_cap: int = 10_000
    surrogate_n_train: int = 10_000
    budget_override: int | None = None


@dataclass
class SuiteSpec:
    name: str
    version: str
    cells: tuple[CellSpec, ...]
    replications: int = 30
    master_seed: int = 0
    out_dir: str = "results"


def validate_suite(spec: SuiteSpec) -> None:
    if spec.replications < 1:
        raise SuiteError("replications must be >= 1")
    reg = instances.registry()
    for cell in spec.cells:
        if cell.instance not in reg:
            raise SuiteError(f"unknown instance id {cell.instance!r}")
        if cell.mode not in MODES:
            raise SuiteError(f"unknown mode {cell.mode!r}")
        m = len(reg[cell.instance]().targets)
        for oid in cell.optimizers:
            if oid not in ALL_OPTIMIZERS:
                raise SuiteError(f"unknown optimizer id {oid!r}")
            if oid in MO_OPTIMIZERS and m < 2:
                raise SuiteError(f"{oid!r} needs a multi-objective instance")
            if oid in SO_OPTIMIZERS and m != 1:
                raise SuiteError(f"{oid!r} needs a single-objective instance")
            if oid.endswith("-ex") and cell.mode != "tabular":
                raise SuiteError(f"{oid!r} requires tabular mode")


# Surrogate and tabular instances are benchmark artifacts shared by every
# master seed, so their construction seeds derive from the cell alone.
_instance_cache: dict[tuple, instances.Instance] = {}


def build_instance(cell: CellSpec) -> instances.Instance:
    key = (cell.instance, cell.mode, cell.tabular_cap, cell.surrogate_n_train)
    if key in _instance_cache:
        return _instance_cache[key]
    real = instances.registry()[cell.instance]()
    if cell.mode == "real":
        inst = real
    elif cell.mode == "tabular":
        inst = instances.make_tabular_instance(real, cell.tabular_cap)
    else:
        seed = derive_seed(0, cell.instance, "surrogate-build", "", cell.surrogate_n_train)
        inst = instances.make_surrogate_instance(real, cell.surrogate_n_train, seed=seed)
    _instance_cache[key] = inst
    return inst


def _cell_budget(cell: CellSpec, inst: instances.Instance) -> int:
    return cell.budget_override if cell.budget_override is not None else budget_for(inst.space)


def _cell_filename(cell: CellSpec) -> str:
    safe = cell.instance.replace(":", "_").replace("/", "_")
    return f"{safe}__{cell.mode}.csv"


def _format_row(suite: str, cell: CellSpec, optimizer: str, replication: int,
                rec: EvalRecord, best) -> tuple:
    return (suite, cell.instance, cell.mode, optimizer, replication,
            rec.iteration, repr(float(rec.cumulative_cost)),
            ";".join(repr(float(v)) for v in rec.objectives),
            "" if best is None else repr(float(best)))


def run_cell(suite_name: str, master_seed: int, replications: int,
             cell: CellSpec) -> dict:
    """Execute one cell and return its rows and metadata; failures are
    captured per run instead of raised."""
    inst = build_instance(cell)
    budget = _cell_budget(cell, inst)
    rows, failures = [], []
    for optimizer in sorted(cell.optimizers):
        runner = ALL_OPTIMIZERS[optimizer]
        for rep in range(replications):
            seed = derive_seed(master_seed, cell.instance, cell.mode, optimizer, rep)
            try:
                out = runner(inst, budget, seed)
                traj = out[0] if isinstance(out, tuple) else out
            except Exception as e:
                log.warning("run failed: %s/%s %s rep=%d: %s",
                            cell.instance, cell.mode, optimizer, rep, e)
                failures.append({"instance": cell.instance, "mode": cell.mode,
                                 "optimizer": optimizer, "replication": rep,
                                 "error": f"{type(e).__name__}: {e}"})
                continue
            best = traj.best_so_far()
            for i, rec in enumerate(traj.records):
                rows.append(_format_row(suite_name, cell, optimizer, rep, rec,
                                        best[i] if len(best) else None))
    return {
        "cell": cell,
        "rows": rows,
        "failures": failures,
        "meta": {
            "instance": cell.instance,
            "mode": cell.mode,
            "file": _cell_filename(cell),
            "budget": budget,
            "optimizers": sorted(cell.optimizers),
            "targets": list(inst.targets),
            "directions": list(inst.directions),
            "n_rows": len(rows),
        },
    }


def _write_cell_csv(path: str, rows: list[tuple]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for row in sorted(rows):
        w.writerow(row)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def run_suite(spec: SuiteSpec, workers: int = 1) -> dict:
    """Run every cell x optimizer x replication, write one CSV per cell plus
    manifest.json, and return the manifest."""
    validate_suite(spec)
    t0 = time.time()
    os.makedirs(spec.out_dir, exist_ok=True)
    cells = sorted(spec.cells, key=lambda c: (c.instance, c.mode))
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_task,
                                    [(spec.name, spec.master_seed, spec.replications, c)
                                     for c in cells]))
    else:
        results = [run_cell(spec.name, spec.master_seed, spec.replications, c)
                   for c in cells]

    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "suite": {
            "name": spec.name,
            "version": spec.version,
            "replications": spec.replications,
            "master_seed": spec.master_seed,
            "cells": [asdict(c) for c in cells],
        },
        "cells": [],
        "failures": [],
    }
    for res in results:
        _write_cell_csv(os.path.join(spec.out_dir, res["meta"]["file"]), res["rows"])
        manifest["cells"].append(res["meta"])
        manifest["failures"].extend(res["failures"])
    manifest["wall_time_seconds"] = round(time.time() - t0, 3)
    with open(os.path.join(spec.out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _run_cell_task(args: tuple) -> dict:
    return run_cell(*args)


# ---------------------------------------------------------------------------
# Built-in suites

def _tabsur_desk() -> SuiteSpec:
    fns = ("synth:borehole8", "synth:branin2", "synth:currin2",
           "synth:hartmann3", "synth:hartmann6")
    opts = ("rs", "bo-gp-rs", "bo-rf-rs", "hb")
    cells = tuple(CellSpec(instance=f, mode=m, optimizers=opts,
                           budget_override=50)
                  for f in fns for m in MODES)
    return SuiteSpec(name="tabsur-desk", version="v1.0", cells=cells,
                     replications=10, master_seed=0)


def _synth_so() -> SuiteSpec:
    fns = ("synth:borehole8", "synth:branin2", "synth:currin2",
           "synth:hartmann3", "synth:hartmann6")
    opts = ("rs", "bo-gp-rs", "bo-gp-nm", "bo-rf-rs", "bo-rf-nm",
            "bo-nn-rs", "bo-nn-nm", "hb")
    cells = tuple(CellSpec(instance=f, mode="real", optimizers=opts) for f in fns)
    return SuiteSpec(name="synth-so", version="v1.0", cells=cells, replications=30)


def _synth_mo() -> SuiteSpec:
    opts = ("rs-mo", "rs-x4", "parego", "mego", "ehvi", "mies")
    cells = (CellSpec(instance="synthmo:branin2_currin2", mode="real",
                      optimizers=opts),)
    return SuiteSpec(name="synth-mo", version="v1.0", cells=cells, replications=30)


SUITES: dict[str, "callable"] = {
    "tabsur-desk": _tabsur_desk,
    "synth-so": _synth_so,
    "synth-mo": _synth_mo,
}


def load_suite_file(path: str) -> SuiteSpec:
    """Suite spec JSON mirroring SuiteSpec/CellSpec field names."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        cells = tuple(CellSpec(
            instance=c["instance"], mode=c["mode"],
            optimizers=tuple(c["optimizers"]),
            targets=tuple(c.get("targets", ())),
            tabular_cap=c.get("tabular_cap", 10_000),
            surrogate_n_train=c.get("surrogate_n_train", 10_000),
            budget_override=c.get("budget_override"),
        ) for c in doc["cells"])
        return SuiteSpec(name=doc["name"], version=doc.get("version", "v1.0"),
                         cells=cells, replications=doc.get("replications", 30),
                         master_seed=doc.get("master_seed", 0),
                         out_dir=doc.get("out_dir", "results"))
    except (KeyError, TypeError) as e:
        raise SuiteError(f"malformed suite file: {e}") from e


# ---------------------------------------------------------------------------
# Analyze pipeline: CSVs back to statistics

@dataclass
class _LoadedRun:
    instance: str
    mode: str
    optimizer: str
    replication: int
    budget: float
    directions: tuple[str, ...]
    budgets: np.ndarray
    objectives: np.ndarray        # (n, m)


def load_results(in_dir: str) -> tuple[dict, list[_LoadedRun]]:
    path = os.path.join(in_dir, "manifest.json")
    if not os.path.exists(path):
        raise SuiteError(f"no manifest.json under {in_dir!r}")
    with open(path) as fh:
        manifest = json.load(fh)
    runs: list[_LoadedRun] = []
    for meta in manifest["cells"]:
        by_run: dict[tuple, list] = {}
        with open(os.path.join(in_dir, meta["file"])) as fh:
            for row in csv.DictReader(fh):
                key = (row["optimizer"], int(row["replication"]))
                by_run.setdefault(key, []).append(row)
        for (optimizer, rep), rows in sorted(by_run.items()):
            rows.sort(key=lambda r: int(r["iteration"]))
            runs.append(_LoadedRun(
                instance=meta["instance"], mode=meta["mode"], optimizer=optimizer,
                replication=rep, budget=float(meta["budget"]),
                directions=tuple(meta["directions"]),
                budgets=np.array([float(r["cumulative_budget"]) for r in rows]),
                objectives=np.array([[float(v) for v in r["objectives"].split(";")]
                                     for r in rows]),
            ))
    return manifest, runs


def _as_trajectory(run: _LoadedRun) -> Trajectory:
    traj = Trajectory(instance_id=f"{run.instance}@{run.mode}",
                      optimizer_id=run.optimizer, seed=run.replication,
                      budget=_nominal_budget(run), directions=run.directions)
    cum_prev = 0.0
    for i in range(len(run.budgets)):
        traj.records.append(EvalRecord(
            iteration=i, config=Configuration({}),
            objectives=tuple(run.objectives[i]),
            cost=float(run.budgets[i]) - cum_prev,
            cumulative_cost=float(run.budgets[i])))
        cum_prev = float(run.budgets[i])
    return traj


def _nominal_budget(run: _LoadedRun) -> float:
    # the quadrupled baseline owns a quadrupled nominal budget
    return run.budget * (4.0 if run.optimizer == "rs-x4" else 1.0)


def _ranking_order(optimizers: list[str], ranks: np.ndarray) -> tuple:
    return tuple(o for _, o in sorted(zip(ranks, optimizers),
                                      key=lambda t: (t[0], t[1])))


def analyze_results(in_dir: str, out_dir: str, fraction: float = 1.0,
                    consensus: bool = False, reference: str | None = None) -> dict:
    """Turn result CSVs into regret/HV long CSVs, a rank matrix CSV, and
    optional consensus plus Friedman/CD reports. Returns the report dict."""
    _, runs = load_results(in_dir)
    os.makedirs(out_dir, exist_ok=True)
    so_runs = [r for r in runs if len(r.directions) == 1]
    mo_runs = [r for r in runs if len(r.directions) >= 2]

    curves: list[analysis.RegretCurve] = []
    groups: dict[tuple, list[_LoadedRun]] = {}
    for r in so_runs:
        groups.setdefault((r.instance, r.mode), []).append(r)
    regret_rows = []
    for (inst, mode), members in sorted(groups.items()):
        cs = analysis.normalized_regret([_as_trajectory(r) for r in members])
        curves.extend(cs)
        for c in cs:
            for b, reg in zip(c.budgets, c.regrets):
                regret_rows.append((inst, mode, c.optimizer_id, c.replication,
                                    repr(float(b)), repr(float(reg))))
    _write_csv(os.path.join(out_dir, "regret_long.csv"),
               ("instance", "mode", "optimizer", "replication",
                "cumulative_budget", "regret"), regret_rows)

    hv_rows = []
    mo_groups: dict[tuple, list[_LoadedRun]] = {}
    for r in mo_runs:
        mo_groups.setdefault((r.instance, r.mode), []).append(r)
    for (inst, mode), members in sorted(mo_groups.items()):
        signs = np.array([1.0 if d == "minimize" else -1.0
                          for d in members[0].directions])
        pooled = np.vstack([r.objectives * signs for r in members])
        ctx = HVContext.from_points(pooled)
        for r in sorted(members, key=lambda r: (r.optimizer, r.replication)):
            hvt = analysis.hv_trajectory(_as_trajectory(r), ctx)
            for b, h in zip(hvt.budgets, hvt.hvs):
                hv_rows.append((inst, mode, r.optimizer, r.replication,
                                repr(float(b)), repr(float(h))))
    _write_csv(os.path.join(out_dir, "hv_long.csv"),
               ("instance", "mode", "optimizer", "replication",
                "cumulative_budget", "hv"), hv_rows)

    report: dict = {"fraction": fraction}
    if curves:
        rm = analysis.mean_ranks(curves, fraction)
        _write_csv(os.path.join(out_dir, "ranks.csv"),
                   ("benchmark", *rm.optimizers),
                   [(inst, *(repr(float(v)) for v in rm.ranks[i]))
                    for i, inst in enumerate(rm.instances)])
        if rm.ranks.shape[0] >= 2:
            stat, p = analysis.friedman_test(rm.ranks)
            report["friedman"] = {"statistic": stat, "p_value": p,
                                  "cd_alpha_05": analysis.nemenyi_cd(
                                      len(rm.optimizers), len(rm.instances))}
        if consensus:
            report["consensus"] = consensus_by_mode(curves, fraction, reference)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


def consensus_by_mode(curves: list[analysis.RegretCurve], fraction: float,
                      reference: str | None) -> dict:
    """Per-mode Kemeny consensus of per-instance optimizer rankings, with
    Kendall distances to the reference mode's consensus when given."""
    modes = sorted({c.instance_id.split("@")[1] for c in curves})
    per_mode: dict[str, analysis.ConsensusResult] = {}
    for mode in modes:
        sub = [c for c in curves if c.instance_id.endswith(f"@{mode}")]
        rm = analysis.mean_ranks(sub, fraction)
        orders = [_ranking_order(rm.optimizers, rm.ranks[i])
                  for i in range(len(rm.instances))]
        per_mode[mode] = analysis.kemeny_consensus(orders)
    out = {}
    ref_order = None
    if reference is not None:
        if reference not in per_mode:
            raise SuiteError(f"reference mode {reference!r} absent from results")
        ref_order = per_mode[reference].order
    for mode, res in per_mode.items():
        entry = {"order": list(res.order), "total_distance": res.total_distance}
        if ref_order is not None:
            entry["kendall_to_reference"] = analysis.kendall_distance(res.order, ref_order)
        out[mode] = entry
    return out


def _write_csv(path: str, header: tuple, rows: list[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in sorted(rows):
            w.writerow(row)
