import dataclasses
import json

import numpy as np
import pytest

from tunebench import testfuncs
from tunebench.instances import (
    Instance, InstanceFormatError, InvalidConfigurationError, ObjectiveVector,
    load_instance, make_pair_instance, make_real_instance,
    make_surrogate_instance, make_tabular_instance, orient, registry,
    save_instance,
)
from tunebench.space import Configuration, parse_space, sample

from conftest import box_space


@pytest.fixture(scope="module")
def branin_real():
    return make_real_instance("branin2")


@pytest.fixture(scope="module")
def branin_tabular(branin_real):
    # 3 points per non-budget axis (3^2 = 9 <= cap) crossed with the
    # 10-step fidelity ladder
    return make_tabular_instance(branin_real, non_budget_cap=9)


@pytest.fixture(scope="module")
def branin_surrogate(branin_real):
    return make_surrogate_instance(branin_real, n_train=2000, seed=7)


class _ConstantEvaluator:
    def evaluate(self, instance, config, seed=None):
        return ObjectiveVector((7.0,), instance._fraction(config))

    def evaluate_batch(self, instance, configs):
        return np.full((len(configs), 1), 7.0)


def _flat_instance(space):
    return Instance(id="synth:flat", space=space, targets=("value",),
                    directions=("minimize",), mode="real",
                    evaluator=_ConstantEvaluator())


# ---------------------------------------------------------------------------
# real instances

def test_real_instance_layout(branin_real):
    inst = branin_real
    assert inst.id == "synth:branin2"
    assert inst.mode == "real"
    assert inst.m == 1
    assert inst.targets == ("value",)
    assert inst.directions == ("minimize",)
    assert inst.space.dim == 2
    assert inst.space.budget_param.id == "z"


def test_real_evaluate_hits_known_optimum(branin_real):
    opt = testfuncs.known_optimum("branin2")
    for argmin in opt.argmins:
        cfg = Configuration({"x1": argmin[0], "x2": argmin[1], "z": 1.0})
        out = branin_real.evaluate(cfg)
        assert out.values[0] == pytest.approx(opt.value, abs=1e-5)
        assert out.cost == 1.0


def test_real_evaluate_deterministic(branin_real):
    cfg = Configuration({"x1": 3.0, "x2": 7.0, "z": 0.5})
    a = branin_real.evaluate(cfg)
    b = branin_real.evaluate(cfg)
    assert a.values == b.values and a.cost == b.cost


def test_cost_is_fidelity_fraction(branin_real):
    lowest = Configuration({"x1": 0.0, "x2": 0.0, "z": testfuncs.Z_MIN})
    assert branin_real.evaluate(lowest).cost == pytest.approx(2.0 ** -9)
    mid = Configuration({"x1": 0.0, "x2": 0.0, "z": 0.25})
    assert branin_real.evaluate(mid).cost == pytest.approx(0.25)


def test_invalid_configurations_rejected(branin_real):
    with pytest.raises(InvalidConfigurationError):
        branin_real.evaluate(Configuration({"x1": 99.0, "x2": 0.0, "z": 1.0}))
    with pytest.raises(InvalidConfigurationError):
        branin_real.evaluate(Configuration({"x1": 0.0, "x2": 0.0}))


def test_orient_negates_maximize_targets(branin_real):
    flipped = dataclasses.replace(branin_real, directions=("maximize",))
    np.testing.assert_allclose(orient(flipped, [2.5]), [-2.5])
    np.testing.assert_allclose(orient(branin_real, [2.5]), [2.5])


# ---------------------------------------------------------------------------
# paired bi-objective fixture

def test_pair_instance_layout():
    inst = make_pair_instance("branin2", "currin2")
    assert inst.id == "synthmo:branin2_currin2"
    assert inst.mode == "real"
    assert inst.m == 2
    assert inst.targets == ("branin2", "currin2")
    assert inst.directions == ("minimize", "minimize")
    assert [p.id for p in inst.space.params] == ["x1", "x2", "z"]
    for p in inst.space.params[:2]:
        assert (p.lower, p.upper) == (0.0, 1.0)
    assert inst.space.budget_param.id == "z"


def test_pair_instance_maps_unit_box_to_native_domains():
    inst = make_pair_instance("branin2", "currin2")
    u = (0.25, 0.75)
    out = inst.evaluate(Configuration({"x1": u[0], "x2": u[1], "z": 1.0}))
    expected = []
    for name in ("branin2", "currin2"):
        fn = testfuncs.FUNCTIONS[name]
        x = np.array([b[0] + ui * (b[1] - b[0]) for ui, b in zip(u, fn.bounds)])
        expected.append(testfuncs.eval_synthetic(fn, x, 1.0))
    np.testing.assert_allclose(out.values, expected, rtol=1e-12)
    assert out.cost == 1.0


def test_pair_requires_matching_dimension():
    with pytest.raises(ValueError, match="dimension"):
        make_pair_instance("branin2", "hartmann3")


# ---------------------------------------------------------------------------
# tabular instances

def test_tabular_metadata(branin_real, branin_tabular):
    t = branin_tabular
    assert t.mode == "tabular"
    assert t.id == branin_real.id
    assert t.source_id == branin_real.id
    ev = t.tabular
    assert ev is not None
    assert len(ev.grid) == 90
    assert ev.Y.shape == (90, 1)
    assert ev.costs.shape == (90,)
    assert branin_real.tabular is None


def test_tabular_exact_member_lookup(branin_tabular):
    ev = branin_tabular.tabular
    for i in (0, 17, 89):
        out = branin_tabular.evaluate(ev.grid[i])
        assert out.values == tuple(ev.Y[i])
        assert out.cost == float(ev.costs[i])


def test_tabular_is_piecewise_constant(branin_tabular):
    rng = np.random.default_rng(3)
    ev = branin_tabular.tabular
    for cfg in sample(branin_tabular.space, rng, 25):
        i = ev.round_index(cfg)
        out = branin_tabular.evaluate(cfg)
        assert out.values == tuple(ev.Y[i])
        assert out.cost == float(ev.costs[i])


def test_tabular_charges_rounded_fidelity(branin_tabular):
    ev = branin_tabular.tabular
    rungs = sorted({c["z"] for c in ev.grid})
    probe = 0.6 * rungs[3] + 0.4 * rungs[4]
    assert probe not in rungs
    cfg = Configuration({"x1": 0.0, "x2": 0.0, "z": probe})
    out = branin_tabular.evaluate(cfg)
    i = ev.round_index(cfg)
    assert out.cost == float(ev.costs[i])
    assert ev.grid[i]["z"] in rungs
    assert out.cost != probe


def test_tabular_tie_rounds_to_lower_index(branin_tabular):
    # x1 spans {-5, 2.5, 10}; -1.25 sits exactly midway between the first
    # two values and must resolve to the lower grid index
    ev = branin_tabular.tabular
    i = ev.round_index(Configuration({"x1": -1.25, "x2": 0.0, "z": 1.0}))
    assert ev.grid[i]["x1"] == -5.0


def test_tabular_full_fidelity_rows(branin_tabular):
    ev = branin_tabular.tabular
    rows = ev.full_fidelity_rows(branin_tabular.space)
    assert len(rows) == 9
    assert all(ev.grid[i]["z"] == 1.0 for i in rows)


def test_tabular_rows_are_real_evaluations(branin_real, branin_tabular):
    ev = branin_tabular.tabular
    for i in (0, 45, 89):
        expected = branin_real.evaluate(ev.grid[i]).values[0]
        assert ev.Y[i, 0] == pytest.approx(expected, rel=1e-12)


def test_tabular_requires_real_source(branin_tabular):
    with pytest.raises(ValueError, match="real"):
        make_tabular_instance(branin_tabular, non_budget_cap=9)


# ---------------------------------------------------------------------------
# surrogate instances

def test_surrogate_rank_fidelity(branin_surrogate):
    q = branin_surrogate.quality
    assert q is not None
    assert q.rho[0] is not None and q.rho[0] >= 0.9
    assert q.faithful
    assert 1550 <= q.n_train <= 1650
    assert 350 <= q.n_test <= 450


def test_surrogate_metadata(branin_surrogate):
    assert branin_surrogate.mode == "surrogate"
    assert branin_surrogate.id == "synth:branin2"
    assert branin_surrogate.source_id == "synth:branin2"
    assert branin_surrogate.targets == ("value",)


def test_surrogate_predictions_clamped_to_training_range(branin_surrogate):
    model = branin_surrogate.evaluator.model
    lo = float(model.scaler.mins_[0])
    hi = float(model.scaler.maxs_[0])
    rng = np.random.default_rng(11)
    for cfg in sample(branin_surrogate.space, rng, 50):
        v = branin_surrogate.evaluate(cfg).values[0]
        assert lo - 1e-9 <= v <= hi + 1e-9


def test_surrogate_cost_follows_requested_fidelity(branin_surrogate):
    cfg = Configuration({"x1": 1.0, "x2": 4.0, "z": 0.25})
    assert branin_surrogate.evaluate(cfg).cost == pytest.approx(0.25)


def test_surrogate_build_deterministic(branin_real, branin_surrogate):
    again = make_surrogate_instance(branin_real, n_train=2000, seed=7)
    cfg = Configuration({"x1": 1.0, "x2": 4.0, "z": 1.0})
    assert again.evaluate(cfg).values == branin_surrogate.evaluate(cfg).values
    assert again.quality.rho == branin_surrogate.quality.rho


def test_surrogate_requires_real_source(branin_surrogate):
    with pytest.raises(ValueError, match="real"):
        make_surrogate_instance(branin_surrogate, n_train=100)


def test_surrogate_flags_degenerate_targets():
    sur = make_surrogate_instance(_flat_instance(box_space(2)), n_train=120, seed=5)
    assert sur.quality.rho == (None,)
    assert not sur.quality.faithful


# ---------------------------------------------------------------------------
# persistence

def _rewrite_header(path, **patch):
    raw = path.read_bytes()
    line, _, rest = raw.partition(b"\n")
    h = json.loads(line.decode())
    h.update(patch)
    path.write_bytes((json.dumps(h, sort_keys=True) + "\n").encode() + rest)


def test_tabular_round_trip(tmp_path, branin_tabular):
    path = tmp_path / "branin_table.bin"
    save_instance(branin_tabular, str(path))
    loaded = load_instance(str(path))
    assert loaded.id == branin_tabular.id
    assert loaded.mode == "tabular"
    assert loaded.source_id == branin_tabular.source_id
    assert loaded.targets == branin_tabular.targets
    assert loaded.directions == branin_tabular.directions
    rng = np.random.default_rng(2)
    for cfg in sample(loaded.space, rng, 20):
        a = branin_tabular.evaluate(cfg)
        b = loaded.evaluate(cfg)
        assert a.values == b.values and a.cost == b.cost


def test_tabular_round_trip_preserves_cell_types(tmp_path):
    doc = {
        "name": "mixed",
        "params": [
            {"id": "x", "kind": "continuous", "lower": 0.0, "upper": 1.0},
            {"id": "n", "kind": "integer", "lower": 1, "upper": 3},
            {"id": "c", "kind": "categorical", "levels": ["a", "b"]},
            {"id": "z", "kind": "continuous", "lower": 2.0 ** -9, "upper": 1.0,
             "budget": True},
        ],
    }
    space = parse_space(json.dumps(doc))
    tab = make_tabular_instance(_flat_instance(space), non_budget_cap=12)
    path = tmp_path / "mixed_table.bin"
    save_instance(tab, str(path))
    loaded = load_instance(str(path))
    assert len(loaded.tabular.grid) == len(tab.tabular.grid)
    for a, b in zip(tab.tabular.grid, loaded.tabular.grid):
        assert a.values == b.values
        assert all(type(b[k]) is type(a[k]) for k in a.values)


def test_surrogate_round_trip(tmp_path, branin_surrogate):
    path = tmp_path / "branin_model.bin"
    save_instance(branin_surrogate, str(path))
    loaded = load_instance(str(path))
    assert loaded.quality == branin_surrogate.quality
    assert loaded.evaluator.prediction_mode == "mean"
    rng = np.random.default_rng(4)
    for cfg in sample(loaded.space, rng, 20):
        assert loaded.evaluate(cfg).values == branin_surrogate.evaluate(cfg).values


def test_save_rejects_real_instances(tmp_path, branin_real):
    with pytest.raises(ValueError, match="persist"):
        save_instance(branin_real, str(tmp_path / "nope.bin"))


def test_load_rejects_non_instance_files(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"not json\npayload")
    with pytest.raises(InstanceFormatError, match="header"):
        load_instance(str(p))
    p.write_bytes(b'{"format": "something-else"}\n')
    with pytest.raises(InstanceFormatError, match="not an instance"):
        load_instance(str(p))


def test_load_rejects_wrong_version(tmp_path, branin_tabular):
    p = tmp_path / "versioned.bin"
    save_instance(branin_tabular, str(p))
    _rewrite_header(p, version=99)
    with pytest.raises(InstanceFormatError, match="version"):
        load_instance(str(p))


def test_load_rejects_space_hash_mismatch(tmp_path, branin_tabular):
    p = tmp_path / "hashed.bin"
    save_instance(branin_tabular, str(p))
    _rewrite_header(p, space_hash="0" * 16)
    with pytest.raises(InstanceFormatError, match="hash"):
        load_instance(str(p))


def test_load_rejects_corrupt_payload(tmp_path, branin_tabular):
    p = tmp_path / "corrupt.bin"
    save_instance(branin_tabular, str(p))
    line, _, _ = p.read_bytes().partition(b"\n")
    p.write_bytes(line + b"\n" + b"\x00\x01garbage")
    with pytest.raises(InstanceFormatError, match="payload"):
        load_instance(str(p))


# ---------------------------------------------------------------------------
# registry

def test_registry_contents():
    reg = registry()
    assert set(reg) == {
        "synth:borehole8", "synth:branin2", "synth:currin2",
        "synth:hartmann3", "synth:hartmann6", "synthmo:branin2_currin2",
    }
    for key, factory in reg.items():
        inst = factory()
        assert inst.id == key
        assert inst.mode == "real"
