"""Benchmark instances: real, tabular, and surrogate flavours of a problem.

A real instance evaluates its objective directly. A tabular instance holds a
finite grid of precomputed rows and answers queries by rounding to the
nearest grid member (piecewise-constant objective). A surrogate instance
answers from a regression model fitted to sampled evaluations of the real
instance, with predictions clamped to the training target range.

Evaluation cost is expressed in full-fidelity-equivalents: the budget
parameter's value divided by its upper bound (1.0 when the space has no
budget parameter). Tabular lookups charge the rounded row's fidelity.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import testfuncs
from .models import (DegenerateRanksError, MLPConfig, MLPEnsemble, TargetScaler,
                     encode_dataset, ensemble_predict, fit_mlp_ensemble,
                     spearman_rho, stratified_split)
from .space import (Configuration, GridIndex, ParamDef, SearchSpace, encode,
                    encode_matrix, make_grid, parse_space, sample_encoded,
                    serialize_space, space_hash, validate)

log = logging.getLogger(__name__)

FORMAT_NAME = "tunebench-instance"
FORMAT_VERSION = 1

RHO_WARN = 0.7


class InvalidConfigurationError(ValueError):
    pass


class InstanceFormatError(ValueError):
    """Unreadable, wrong-version, or inconsistent instance file."""


@dataclass(frozen=True)
class ObjectiveVector:
    values: tuple[float, ...]
    cost: float


@dataclass
class EvalRecord:
    iteration: int
    config: Configuration
    objectives: tuple[float, ...]
    cost: float
    cumulative_cost: float


@dataclass
class SurrogateQuality:
    """Held-out rank fidelity of a surrogate, one rho per target (None when
    the test targets were constant)."""

    rho: tuple[float | None, ...]
    n_train: int
    n_test: int

    @property
    def faithful(self) -> bool:
        return all(r is not None and r > RHO_WARN for r in self.rho)


@dataclass
class Instance:
    id: str
    space: SearchSpace
    targets: tuple[str, ...]
    directions: tuple[str, ...]
    mode: str
    evaluator: object
    source_id: str | None = None
    quality: SurrogateQuality | None = None

    @property
    def m(self) -> int:
        return len(self.targets)

    def _fraction(self, config: Configuration) -> float:
        bp = self.space.budget_param
        if bp is None:
            return 1.0
        return float(config[bp.id]) / bp.upper

    def evaluate(self, config: Configuration, seed: int | None = None) -> ObjectiveVector:
        report = validate(self.space, config)
        if not report.ok:
            raise InvalidConfigurationError("; ".join(report.violations))
        return self.evaluator.evaluate(self, config, seed)

    @property
    def tabular(self) -> "TabularEvaluator | None":
        return self.evaluator if isinstance(self.evaluator, TabularEvaluator) else None


def orient(instance: Instance, values) -> np.ndarray:
    """Objective values with maximize targets negated, so smaller is better."""
    v = np.asarray(values, dtype=float)
    signs = np.array([1.0 if d == "minimize" else -1.0 for d in instance.directions])
    return v * signs


# ---------------------------------------------------------------------------
# Real instances over the synthetic functions

@dataclass
class SyntheticEvaluator:
    fn_name: str

    def evaluate(self, instance: Instance, config: Configuration, seed=None) -> ObjectiveVector:
        fn = testfuncs.FUNCTIONS[self.fn_name]
        x = testfuncs.config_to_x(fn, config)
        z = float(config["z"])
        return ObjectiveVector((testfuncs.eval_synthetic(fn, x, z),), instance._fraction(config))

    def evaluate_batch(self, instance: Instance, configs: list[Configuration]) -> np.ndarray:
        fn = testfuncs.FUNCTIONS[self.fn_name]
        X = np.array([[c[f"x{i + 1}"] for i in range(fn.dim)] for c in configs], dtype=float)
        Z = np.array([c["z"] for c in configs], dtype=float)
        return testfuncs.eval_batch(fn, X, Z)[:, None]


@dataclass
class PairedSyntheticEvaluator:
    """Two same-dimension synthetic functions sharing one unit-box space,
    each evaluated through its own affine coordinate map."""

    fn_names: tuple[str, str]

    def _xmat(self, fn, U: np.ndarray) -> np.ndarray:
        lo = np.array([b[0] for b in fn.bounds])
        hi = np.array([b[1] for b in fn.bounds])
        return lo + U * (hi - lo)

    def evaluate(self, instance: Instance, config: Configuration, seed=None) -> ObjectiveVector:
        return ObjectiveVector(tuple(self.evaluate_batch(instance, [config])[0]),
                               instance._fraction(config))

    def evaluate_batch(self, instance: Instance, configs: list[Configuration]) -> np.ndarray:
        d = testfuncs.FUNCTIONS[self.fn_names[0]].dim
        U = np.array([[c[f"x{i + 1}"] for i in range(d)] for c in configs], dtype=float)
        Z = np.array([c["z"] for c in configs], dtype=float)
        cols = []
        for name in self.fn_names:
            fn = testfuncs.FUNCTIONS[name]
            cols.append(testfuncs.eval_batch(fn, self._xmat(fn, U), Z))
        return np.stack(cols, axis=1)


def make_real_instance(fn: testfuncs.SyntheticFunction | str) -> Instance:
    if isinstance(fn, str):
        fn = testfuncs.FUNCTIONS[fn]
    return Instance(
        id=f"synth:{fn.name}",
        space=testfuncs.space_for(fn),
        targets=("value",),
        directions=("minimize",),
        mode="real",
        evaluator=SyntheticEvaluator(fn.name),
    )


def make_pair_instance(name_a: str, name_b: str) -> Instance:
    """Bi-objective fixture: both functions on a shared unit box."""
    fa, fb = testfuncs.FUNCTIONS[name_a], testfuncs.FUNCTIONS[name_b]
    if fa.dim != fb.dim:
        raise ValueError("paired functions must share dimensionality")
    params = [ParamDef(f"x{i + 1}", "continuous", 0.0, 1.0) for i in range(fa.dim)]
    params.append(ParamDef("z", "continuous", testfuncs.Z_MIN, testfuncs.Z_MAX, budget=True))
    return Instance(
        id=f"synthmo:{name_a}_{name_b}",
        space=SearchSpace(name=f"{name_a}_{name_b}", params=tuple(params)),
        targets=(name_a, name_b),
        directions=("minimize", "minimize"),
        mode="real",
        evaluator=PairedSyntheticEvaluator((name_a, name_b)),
    )


# ---------------------------------------------------------------------------
# Tabular instances

@dataclass
class TabularEvaluator:
    grid: list
    Y: np.ndarray                 # (rows, m)
    costs: np.ndarray             # (rows,)
    index: GridIndex = field(repr=False)

    def evaluate(self, instance: Instance, config: Configuration, seed=None) -> ObjectiveVector:
        i = self.index.round(config)
        return ObjectiveVector(tuple(self.Y[i]), float(self.costs[i]))

    def round_index(self, config: Configuration) -> int:
        return self.index.round(config)

    def full_fidelity_rows(self, space: SearchSpace) -> np.ndarray:
        bp = space.budget_param
        if bp is None:
            return np.arange(len(self.grid))
        vals = np.array([c[bp.id] for c in self.grid], dtype=float)
        return np.flatnonzero(vals == bp.upper)


def _batch_values(instance: Instance, configs: list[Configuration]) -> np.ndarray:
    ev = instance.evaluator
    if hasattr(ev, "evaluate_batch"):
        return np.asarray(ev.evaluate_batch(instance, configs), dtype=float)
    out = np.empty((len(configs), instance.m))
    for i, c in enumerate(configs):
        out[i] = instance.evaluate(c).values
    return out


def make_tabular_instance(real: Instance, non_budget_cap: int,
                          budget_levels: list[float] | None = None) -> Instance:
    """Precompute the grid crossed with the budget ladder and wrap it as a
    piecewise-constant instance."""
    if real.mode != "real":
        raise ValueError("tabular instances are built from real instances")
    grid = make_grid(real.space, non_budget_cap, budget_levels)
    Y = _batch_values(real, grid)
    bp = real.space.budget_param
    if bp is None:
        costs = np.ones(len(grid))
    else:
        costs = np.array([c[bp.id] for c in grid], dtype=float) / bp.upper
    ev = TabularEvaluator(grid=grid, Y=Y, costs=costs, index=GridIndex(real.space, grid))
    return Instance(id=real.id, space=real.space, targets=real.targets,
                    directions=real.directions, mode="tabular", evaluator=ev,
                    source_id=real.id)


# ---------------------------------------------------------------------------
# Surrogate instances

@dataclass
class SurrogateEvaluator:
    model: MLPEnsemble
    prediction_mode: str = "mean"   # 'mean' or 'dirichlet'

    def evaluate(self, instance: Instance, config: Configuration, seed=None) -> ObjectiveVector:
        x = encode(instance.space, config)
        pred = ensemble_predict(self.model, x[None, :], mode=self.prediction_mode)[0]
        return ObjectiveVector(tuple(float(v) for v in pred), instance._fraction(config))

    def evaluate_batch(self, instance: Instance, configs: list[Configuration]) -> np.ndarray:
        X = encode_matrix(instance.space, configs)
        return ensemble_predict(self.model, X, mode=self.prediction_mode)


def make_surrogate_instance(real: Instance, n_train: int,
                            cfg: MLPConfig | None = None, seed: int = 0,
                            noisy: bool = False) -> Instance:
    """Sample the real instance (fidelity included), fit the ensemble on a
    stratified 0.6/0.2/0.2 split, and report held-out rank fidelity.

    Surrogates with held-out rho <= 0.7 on any target are kept but logged as
    unfaithful.
    """
    if real.mode != "real":
        raise ValueError("surrogate instances are built from real instances")
    cfg = cfg or MLPConfig()
    rng = np.random.default_rng(seed)
    X, decode = sample_encoded(real.space, rng, n_train)
    configs = [decode(i) for i in range(n_train)]
    Y = _batch_values(real, configs)

    idx_train, idx_val, idx_test = stratified_split(Y[:, 0], (0.6, 0.2, 0.2), rng)
    idx_fit = np.concatenate([idx_train, idx_val])
    # the ensemble carves its own validation share out of what we pass in;
    # a quarter of train+val reproduces the 0.6/0.2 split of the whole
    fit_cfg = MLPConfig(**{**cfg.__dict__, "val_fraction": len(idx_val) / max(len(idx_fit), 1)})
    data = encode_dataset(real.space, [configs[i] for i in idx_fit], Y[idx_fit])
    model = fit_mlp_ensemble(data, fit_cfg, seed=int(rng.integers(2 ** 63)))

    ev = SurrogateEvaluator(model=model, prediction_mode="dirichlet" if noisy else "mean")
    inst = Instance(id=real.id, space=real.space, targets=real.targets,
                    directions=real.directions, mode="surrogate", evaluator=ev,
                    source_id=real.id)
    pred = ensemble_predict(model, X[idx_test], mode="mean")
    rhos: list[float | None] = []
    for j in range(real.m):
        try:
            rhos.append(spearman_rho(pred[:, j], Y[idx_test, j]))
        except DegenerateRanksError:
            rhos.append(None)
    inst.quality = SurrogateQuality(rho=tuple(rhos), n_train=len(idx_fit), n_test=len(idx_test))
    if not inst.quality.faithful:
        log.warning("surrogate for %s has held-out rho %s (<= %s on some target)",
                    real.id, inst.quality.rho, RHO_WARN)
    return inst


# ---------------------------------------------------------------------------
# Persistence: one JSON header line, then an npz payload.

def _header(instance: Instance, extra: dict) -> bytes:
    h = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "id": instance.id,
        "mode": instance.mode,
        "space_hash": space_hash(instance.space),
        "targets": list(instance.targets),
        "directions": list(instance.directions),
        "source_id": instance.source_id,
        "quality": None if instance.quality is None else {
            "rho": list(instance.quality.rho),
            "n_train": instance.quality.n_train,
            "n_test": instance.quality.n_test,
        },
    }
    h.update(extra)
    return (json.dumps(h, sort_keys=True) + "\n").encode()


def save_instance(instance: Instance, path: str) -> None:
    arrays: dict[str, np.ndarray] = {"space_json": np.array(serialize_space(instance.space))}
    if instance.mode == "tabular":
        ev: TabularEvaluator = instance.evaluator
        extra = {"payload": "table"}
        arrays["Y"] = ev.Y
        arrays["costs"] = ev.costs
        for p in instance.space.params:
            col = [c[p.id] for c in ev.grid]
            arrays[f"param__{p.id}"] = np.array(col)
    elif instance.mode == "surrogate":
        ev = instance.evaluator
        model: MLPEnsemble = ev.model
        extra = {
            "payload": "ensemble",
            "prediction_mode": ev.prediction_mode,
            "n_targets": model.n_targets,
            "transform": model.scaler.transform,
            "clamp": model.scaler.clamp,
            "hidden": list(model.cfg.hidden),
            "members": len(model.members),
        }
        arrays["weights"] = model.weights
        arrays["scaler_mins"] = model.scaler.mins_
        arrays["scaler_maxs"] = model.scaler.maxs_
        for mi, params in enumerate(model.members):
            for ki, w in enumerate(params):
                arrays[f"member{mi}_{ki}"] = w
    else:
        raise ValueError("only tabular and surrogate instances persist")

    buf = io.BytesIO()
    np.savez_compressed(buf, **arrays)
    with open(path, "wb") as fh:
        fh.write(_header(instance, extra))
        fh.write(buf.getvalue())


def load_instance(path: str) -> Instance:
    with open(path, "rb") as fh:
        line = fh.readline()
        rest = fh.read()
    try:
        h = json.loads(line.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InstanceFormatError(f"unreadable instance header: {e}") from e
    if h.get("format") != FORMAT_NAME:
        raise InstanceFormatError("not an instance file")
    if h.get("version") != FORMAT_VERSION:
        raise InstanceFormatError(f"unsupported version {h.get('version')!r}")
    try:
        arrays = np.load(io.BytesIO(rest), allow_pickle=False)
    except Exception as e:
        raise InstanceFormatError(f"corrupted payload: {e}") from e

    space = parse_space(str(arrays["space_json"]))
    if space_hash(space) != h["space_hash"]:
        raise InstanceFormatError("space hash mismatch")
    quality = None
    if h.get("quality"):
        q = h["quality"]
        quality = SurrogateQuality(rho=tuple(q["rho"]), n_train=q["n_train"], n_test=q["n_test"])

    if h["payload"] == "table":
        cols = {p.id: arrays[f"param__{p.id}"] for p in space.params}
        grid = []
        n = len(arrays["Y"])
        for i in range(n):
            values = {}
            for p in space.params:
                v = cols[p.id][i]
                values[p.id] = (str(v) if p.kind == "categorical"
                                else int(v) if p.kind == "integer" else float(v))
            grid.append(Configuration(values))
        ev = TabularEvaluator(grid=grid, Y=arrays["Y"], costs=arrays["costs"],
                              index=GridIndex(space, grid))
    elif h["payload"] == "ensemble":
        scaler = TargetScaler(transform=h["transform"], clamp=h["clamp"])
        scaler.mins_ = arrays["scaler_mins"]
        scaler.maxs_ = arrays["scaler_maxs"]
        members = []
        for mi in range(h["members"]):
            members.append([arrays[f"member{mi}_{ki}"] for ki in range(6)])
        cfg = MLPConfig(hidden=tuple(h["hidden"]), members=h["members"],
                        transform=h["transform"], clamp=h["clamp"])
        model = MLPEnsemble(members=members, weights=arrays["weights"], scaler=scaler,
                            n_targets=h["n_targets"], cfg=cfg)
        ev = SurrogateEvaluator(model=model, prediction_mode=h["prediction_mode"])
    else:
        raise InstanceFormatError(f"unknown payload kind {h['payload']!r}")

    return Instance(id=h["id"], space=space, targets=tuple(h["targets"]),
                    directions=tuple(h["directions"]), mode=h["mode"], evaluator=ev,
                    source_id=h.get("source_id"), quality=quality)


# ---------------------------------------------------------------------------
# Registry

def registry() -> dict[str, "callable"]:
    """Instance ids -> zero-argument factories for the shipped problems."""
    reg: dict = {}
    for name in testfuncs.FUNCTIONS:
        reg[f"synth:{name}"] = (lambda n=name: make_real_instance(n))
    reg["synthmo:branin2_currin2"] = lambda: make_pair_instance("branin2", "currin2")
    return reg
