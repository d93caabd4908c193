import csv
import dataclasses
import filecmp
import hashlib
import json
import math
import types

import pytest

from tunebench.runner import (
    ARTIFACT_VERSION, MODES, RESULT_COLUMNS, SUITES, CellSpec, SuiteError,
    SuiteSpec, analyze_results, budget_for, build_instance, derive_seed,
    load_results, load_suite_file, run_suite, validate_suite,
)
from tunebench.space import ParamDef, SearchSpace, SpaceValidationError

from conftest import box_space

BUDGET_TABLE = {2: 77, 3: 90, 5: 110, 7: 126, 8: 134,
                13: 165, 14: 170, 28: 232, 33: 250, 38: 267}


def _mini_spec(out_dir, master_seed=5, replications=2):
    cells = (CellSpec(instance="synth:branin2", mode="real",
                      optimizers=("rs", "hb"), budget_override=6),
             CellSpec(instance="synth:currin2", mode="real",
                      optimizers=("rs", "hb"), budget_override=6))
    return SuiteSpec(name="mini", version="v0", cells=cells,
                     replications=replications, master_seed=master_seed,
                     out_dir=str(out_dir))


def _read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# budget formula and seed derivation

def test_budget_formula_table():
    for d, expected in BUDGET_TABLE.items():
        assert budget_for(box_space(d)) == expected


def test_budget_formula_is_ceiling():
    assert budget_for(box_space(2)) == math.ceil(20 + 40 * math.sqrt(2))


def test_budget_formula_needs_searchable_dimension():
    # the space layer refuses to build such a space, so the runner guard is
    # exercised with a bare stand-in carrying the same attribute
    with pytest.raises(SpaceValidationError, match="non-budget"):
        SearchSpace(name="only-budget", params=(
            ParamDef("z", "continuous", 0.5, 1.0, budget=True),))
    with pytest.raises(SuiteError, match="non-budget"):
        budget_for(types.SimpleNamespace(dim=0))


def test_derive_seed_recipe():
    text = "7|synth:branin2|real|rs|3"
    expected = int.from_bytes(hashlib.sha256(text.encode()).digest()[:8],
                              "big") % 2 ** 63
    assert derive_seed(7, "synth:branin2", "real", "rs", 3) == expected


def test_derive_seed_sensitivity():
    base = derive_seed(0, "synth:branin2", "real", "rs", 0)
    assert base == derive_seed(0, "synth:branin2", "real", "rs", 0)
    assert 0 <= base < 2 ** 63
    variants = [derive_seed(1, "synth:branin2", "real", "rs", 0),
                derive_seed(0, "synth:currin2", "real", "rs", 0),
                derive_seed(0, "synth:branin2", "tabular", "rs", 0),
                derive_seed(0, "synth:branin2", "real", "hb", 0),
                derive_seed(0, "synth:branin2", "real", "rs", 1)]
    assert base not in variants
    assert len(set(variants)) == len(variants)


# ---------------------------------------------------------------------------
# suite validation

def test_validate_suite_catches_bad_cells():
    def spec(**kw):
        defaults = dict(instance="synth:branin2", mode="real", optimizers=("rs",))
        defaults.update(kw)
        return SuiteSpec(name="t", version="v0", cells=(CellSpec(**defaults),))

    with pytest.raises(SuiteError, match="unknown instance"):
        validate_suite(spec(instance="synth:rosenbrock"))
    with pytest.raises(SuiteError, match="unknown mode"):
        validate_suite(spec(mode="live"))
    with pytest.raises(SuiteError, match="unknown optimizer"):
        validate_suite(spec(optimizers=("sgd",)))
    with pytest.raises(SuiteError, match="multi-objective instance"):
        validate_suite(spec(optimizers=("rs-mo",)))
    with pytest.raises(SuiteError, match="single-objective instance"):
        validate_suite(spec(instance="synthmo:branin2_currin2",
                            optimizers=("rs",)))
    with pytest.raises(SuiteError, match="tabular mode"):
        validate_suite(spec(optimizers=("bo-gp-ex",)))
    good = spec(optimizers=("bo-gp-ex",), mode="tabular")
    validate_suite(good)
    with pytest.raises(SuiteError, match="replications"):
        validate_suite(dataclasses.replace(good, replications=0))


def test_builtin_suites_are_valid():
    assert set(SUITES) == {"tabsur-desk", "synth-so", "synth-mo"}
    for factory in SUITES.values():
        validate_suite(factory())


def test_tabsur_desk_layout():
    spec = SUITES["tabsur-desk"]()
    assert spec.version == "v1.0"
    assert spec.replications == 10
    assert len(spec.cells) == 15
    assert {c.mode for c in spec.cells} == set(MODES)
    assert {c.instance for c in spec.cells} == {
        "synth:borehole8", "synth:branin2", "synth:currin2",
        "synth:hartmann3", "synth:hartmann6"}
    for cell in spec.cells:
        assert cell.budget_override == 50
        assert cell.optimizers == ("rs", "bo-gp-rs", "bo-rf-rs", "hb")
        assert cell.tabular_cap == 10_000
        assert cell.surrogate_n_train == 10_000


def test_other_builtin_suites_layout():
    so = SUITES["synth-so"]()
    assert len(so.cells) == 5
    assert all(c.mode == "real" for c in so.cells)
    assert all(len(c.optimizers) == 8 for c in so.cells)
    assert so.replications == 30
    mo = SUITES["synth-mo"]()
    assert len(mo.cells) == 1
    assert mo.cells[0].instance == "synthmo:branin2_currin2"
    assert mo.cells[0].optimizers == ("rs-mo", "rs-x4", "parego", "mego",
                                      "ehvi", "mies")
    assert mo.replications == 30


# ---------------------------------------------------------------------------
# suite files

def test_load_suite_file_round_trip(tmp_path):
    doc = {
        "name": "filetest", "version": "v2", "replications": 3,
        "master_seed": 9, "out_dir": "somewhere",
        "cells": [{"instance": "synth:branin2", "mode": "tabular",
                   "optimizers": ["rs", "bo-gp-ex"], "tabular_cap": 500,
                   "budget_override": 12}],
    }
    path = tmp_path / "suite.json"
    path.write_text(json.dumps(doc))
    spec = load_suite_file(str(path))
    assert spec.name == "filetest" and spec.version == "v2"
    assert spec.replications == 3 and spec.master_seed == 9
    assert spec.out_dir == "somewhere"
    cell = spec.cells[0]
    assert cell.optimizers == ("rs", "bo-gp-ex")
    assert cell.tabular_cap == 500 and cell.budget_override == 12
    validate_suite(spec)


def test_load_suite_file_defaults(tmp_path):
    path = tmp_path / "suite.json"
    path.write_text(json.dumps({"name": "d", "cells": [
        {"instance": "synth:branin2", "mode": "real", "optimizers": ["rs"]}]}))
    spec = load_suite_file(str(path))
    assert spec.version == "v1.0"
    assert spec.replications == 30 and spec.master_seed == 0
    assert spec.cells[0].tabular_cap == 10_000
    assert spec.cells[0].budget_override is None


def test_load_suite_file_malformed(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"name": "x"}))
    with pytest.raises(SuiteError, match="malformed"):
        load_suite_file(str(path))
    path.write_text(json.dumps({"name": "x", "cells": [{"mode": "real"}]}))
    with pytest.raises(SuiteError, match="malformed"):
        load_suite_file(str(path))


# ---------------------------------------------------------------------------
# running suites

def test_run_suite_layout_and_manifest(tmp_path):
    spec = _mini_spec(tmp_path / "a")
    manifest = run_suite(spec)
    out = tmp_path / "a"
    assert (out / "manifest.json").exists()
    # the file is the JSON image of the return value (tuples become lists)
    assert json.loads(json.dumps(manifest)) == json.loads(
        (out / "manifest.json").read_text())
    assert manifest["artifact_version"] == ARTIFACT_VERSION
    assert isinstance(manifest["package_version"], str)
    assert isinstance(manifest["numpy_version"], str)
    assert manifest["failures"] == []
    assert manifest["wall_time_seconds"] >= 0.0
    assert manifest["suite"]["name"] == "mini"
    assert manifest["suite"]["master_seed"] == 5

    files = {m["file"] for m in manifest["cells"]}
    assert files == {"synth_branin2__real.csv", "synth_currin2__real.csv"}
    for meta in manifest["cells"]:
        rows = _read_rows(out / meta["file"])
        assert len(rows) == meta["n_rows"]
        assert meta["budget"] == 6
        assert meta["directions"] == ["minimize"]
        with open(out / meta["file"]) as fh:
            header = fh.readline().strip().split(",")
        assert tuple(header) == RESULT_COLUMNS


def test_run_suite_rows_are_canonical(tmp_path):
    spec = _mini_spec(tmp_path / "a")
    run_suite(spec)
    rows = _read_rows(tmp_path / "a" / "synth_branin2__real.csv")
    # random search spends six unit evaluations per replication
    rs = [r for r in rows if r["optimizer"] == "rs" and r["replication"] == "0"]
    assert len(rs) == 6
    assert [int(r["iteration"]) for r in rs] == list(range(6))
    assert float(rs[-1]["cumulative_budget"]) == pytest.approx(6.0)
    best = [float(r["best_so_far"]) for r in rs]
    assert best == sorted(best, reverse=True) or all(
        b1 >= b2 for b1, b2 in zip(best, best[1:]))
    # sorted by the full row tuple with numeric replication and iteration
    keys = [(r["suite"], r["instance"], r["mode"], r["optimizer"],
             int(r["replication"]), int(r["iteration"])) for r in rows]
    assert keys == sorted(keys)
    for r in rows:
        assert float(r["cumulative_budget"]) <= 6.0 + 1e-9


def test_run_suite_reruns_byte_identical(tmp_path):
    run_suite(_mini_spec(tmp_path / "a"))
    run_suite(_mini_spec(tmp_path / "b"))
    for name in ("synth_branin2__real.csv", "synth_currin2__real.csv"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name,
                           shallow=False)


def test_run_suite_workers_match_sequential(tmp_path):
    run_suite(_mini_spec(tmp_path / "a"))
    run_suite(_mini_spec(tmp_path / "c"), workers=2)
    for name in ("synth_branin2__real.csv", "synth_currin2__real.csv"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "c" / name,
                           shallow=False)


def test_run_suite_master_seed_changes_rows(tmp_path):
    run_suite(_mini_spec(tmp_path / "a"))
    run_suite(_mini_spec(tmp_path / "d", master_seed=6))
    assert not filecmp.cmp(tmp_path / "a" / "synth_branin2__real.csv",
                           tmp_path / "d" / "synth_branin2__real.csv",
                           shallow=False)


def test_run_suite_multi_objective_rows(tmp_path):
    spec = SuiteSpec(name="mini-mo", version="v0", cells=(
        CellSpec(instance="synthmo:branin2_currin2", mode="real",
                 optimizers=("rs-mo", "rs-x4"), budget_override=8),),
        replications=1, master_seed=3, out_dir=str(tmp_path / "mo"))
    manifest = run_suite(spec)
    assert manifest["cells"][0]["directions"] == ["minimize", "minimize"]
    rows = _read_rows(tmp_path / "mo" / "synthmo_branin2_currin2__real.csv")
    assert {r["optimizer"] for r in rows} == {"rs-mo", "rs-x4"}
    assert sum(r["optimizer"] == "rs-mo" for r in rows) == 8
    # the quadrupled baseline spends four evaluations per budget unit
    assert sum(r["optimizer"] == "rs-x4" for r in rows) == 32
    for r in rows:
        assert r["best_so_far"] == ""
        a, b = r["objectives"].split(";")
        float(a), float(b)


def test_run_suite_records_failures_without_aborting(tmp_path):
    # a 5-evaluation allowance cannot cover the 10-point initial design, so
    # every model-based run fails while random search still lands
    spec = SuiteSpec(name="failing", version="v0", cells=(
        CellSpec(instance="synth:branin2", mode="real",
                 optimizers=("rs", "bo-gp-rs"), budget_override=5),),
        replications=2, master_seed=0, out_dir=str(tmp_path / "f"))
    manifest = run_suite(spec)
    assert len(manifest["failures"]) == 2
    for failure in manifest["failures"]:
        assert failure["optimizer"] == "bo-gp-rs"
        assert "ValueError" in failure["error"]
    rows = _read_rows(tmp_path / "f" / "synth_branin2__real.csv")
    assert {r["optimizer"] for r in rows} == {"rs"}
    assert manifest["cells"][0]["n_rows"] == len(rows)


def test_build_instance_caches_by_cell_shape():
    cell = CellSpec(instance="synth:branin2", mode="tabular",
                    optimizers=("rs",), tabular_cap=100)
    assert build_instance(cell) is build_instance(cell)


# ---------------------------------------------------------------------------
# analyze pipeline

def test_analyze_results_outputs(tmp_path):
    run_suite(_mini_spec(tmp_path / "a"))
    report = analyze_results(str(tmp_path / "a"), str(tmp_path / "out"),
                             fraction=0.5, consensus=True, reference="real")
    out = tmp_path / "out"
    assert (out / "regret_long.csv").exists()
    assert (out / "hv_long.csv").exists()
    assert (out / "ranks.csv").exists()
    assert report == json.loads((out / "report.json").read_text())

    regret = _read_rows(out / "regret_long.csv")
    assert {r["instance"] for r in regret} == {"synth:branin2", "synth:currin2"}
    for r in regret:
        assert 0.0 <= float(r["regret"]) <= 1.0
    assert _read_rows(out / "hv_long.csv") == []

    ranks = _read_rows(out / "ranks.csv")
    assert len(ranks) == 2
    assert set(ranks[0]) == {"benchmark", "hb", "rs"}
    assert report["fraction"] == 0.5
    assert "friedman" in report
    assert set(report["friedman"]) == {"statistic", "p_value", "cd_alpha_05"}
    assert report["consensus"]["real"]["kendall_to_reference"] == 0
    assert sorted(report["consensus"]["real"]["order"]) == ["hb", "rs"]


def test_analyze_results_deterministic(tmp_path):
    run_suite(_mini_spec(tmp_path / "a"))
    analyze_results(str(tmp_path / "a"), str(tmp_path / "o1"), fraction=1.0)
    analyze_results(str(tmp_path / "a"), str(tmp_path / "o2"), fraction=1.0)
    for name in ("regret_long.csv", "hv_long.csv", "ranks.csv", "report.json"):
        assert filecmp.cmp(tmp_path / "o1" / name, tmp_path / "o2" / name,
                           shallow=False)


def test_analyze_results_multi_objective(tmp_path):
    spec = SuiteSpec(name="mini-mo", version="v0", cells=(
        CellSpec(instance="synthmo:branin2_currin2", mode="real",
                 optimizers=("rs-mo", "rs-x4"), budget_override=8),),
        replications=1, master_seed=3, out_dir=str(tmp_path / "mo"))
    run_suite(spec)
    analyze_results(str(tmp_path / "mo"), str(tmp_path / "out"))
    hv = _read_rows(tmp_path / "out" / "hv_long.csv")
    assert len(hv) == 40
    for r in hv:
        assert 0.0 <= float(r["hv"]) <= 1.0
    assert _read_rows(tmp_path / "out" / "regret_long.csv") == []


def test_analyze_results_missing_reference_mode(tmp_path):
    run_suite(_mini_spec(tmp_path / "a"))
    with pytest.raises(SuiteError, match="reference mode"):
        analyze_results(str(tmp_path / "a"), str(tmp_path / "out"),
                        consensus=True, reference="surrogate")


def test_load_results_requires_manifest(tmp_path):
    with pytest.raises(SuiteError, match="manifest"):
        load_results(str(tmp_path))


def test_load_results_reconstructs_runs(tmp_path):
    run_suite(_mini_spec(tmp_path / "a"))
    manifest, runs = load_results(str(tmp_path / "a"))
    assert manifest["suite"]["name"] == "mini"
    # 2 cells x 2 optimizers x 2 replications
    assert len(runs) == 8
    for run in runs:
        assert run.budget == 6.0
        assert run.directions == ("minimize",)
        assert run.objectives.shape[1] == 1
        assert (run.budgets[1:] >= run.budgets[:-1]).all()
