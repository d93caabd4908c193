"""Hierarchical search spaces: definition, JSON round-trip, sampling, grids.

A space is an ordered list of parameter definitions. Numeric parameters carry
bounds (optionally log-scaled), categorical ones a set of levels. A parameter
may be conditional on a categorical parent, in which case it only exists in a
configuration when the parent takes one of its activating values. At most one
numeric parameter may be flagged as the budget (fidelity) axis.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

KINDS = ("continuous", "integer", "categorical")

#: fidelity fractions of the default budget ladder, 2^-9 .. 2^0
DEFAULT_BUDGET_FRACTIONS = tuple(2.0 ** e for e in range(-9, 1))


class SpaceParseError(ValueError):
    """Malformed space document (syntax). Carries the character offset."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class SpaceValidationError(ValueError):
    """Structurally well-formed but semantically invalid space definition."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


class GridError(ValueError):
    """Grid construction is impossible for the requested cap or space."""


@dataclass(frozen=True)
class ParamDef:
    """One parameter. Field names mirror the JSON document keys."""

    id: str
    kind: str
    lower: float | None = None
    upper: float | None = None
    log: bool = False
    levels: tuple[str, ...] | None = None
    parent: str | None = None
    parent_values: tuple | None = None
    budget: bool = False

    @property
    def is_numeric(self) -> bool:
        return self.kind in ("continuous", "integer")

    @property
    def is_conditional(self) -> bool:
        return self.parent is not None


@dataclass(frozen=True)
class Configuration:
    """An assignment of values to the active parameters of a space."""

    values: dict

    def __getitem__(self, pid: str):
        return self.values[pid]

    def __contains__(self, pid: str) -> bool:
        return pid in self.values

    def get(self, pid: str, default=None):
        return self.values.get(pid, default)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def _check_params(name: str, params: tuple[ParamDef, ...]) -> list[str]:
    problems: list[str] = []
    if not isinstance(name, str) or not name:
        problems.append("space name must be a non-empty string")
    seen: dict[str, ParamDef] = {}
    budget_ids = []
    for p in params:
        where = f"param {p.id!r}"
        if not isinstance(p.id, str) or not p.id:
            problems.append("param id must be a non-empty string")
            continue
        if p.id in seen:
            problems.append(f"{where}: duplicate id")
            continue
        if p.kind not in KINDS:
            problems.append(f"{where}: unknown kind {p.kind!r}")
            seen[p.id] = p
            continue
        if p.is_numeric:
            if p.lower is None or p.upper is None:
                problems.append(f"{where}: numeric parameter needs lower and upper")
            elif not (math.isfinite(p.lower) and math.isfinite(p.upper)):
                problems.append(f"{where}: bounds must be finite")
            elif not p.lower < p.upper:
                problems.append(f"{where}: requires lower < upper")
            elif p.log and p.lower <= 0:
                problems.append(f"{where}: log scale requires lower > 0")
            elif p.kind == "integer" and (p.lower != int(p.lower) or p.upper != int(p.upper)):
                problems.append(f"{where}: integer bounds must be whole numbers")
            if p.levels is not None:
                problems.append(f"{where}: numeric parameter cannot have levels")
        else:
            if p.levels is None or len(p.levels) < 2:
                problems.append(f"{where}: categorical needs at least two levels")
            elif len(set(p.levels)) != len(p.levels):
                problems.append(f"{where}: duplicate levels")
            if p.lower is not None or p.upper is not None:
                problems.append(f"{where}: categorical parameter cannot have bounds")
            if p.log:
                problems.append(f"{where}: categorical parameter cannot be log-scaled")
            if p.budget:
                problems.append(f"{where}: budget parameter must be numeric")
        if p.budget:
            budget_ids.append(p.id)
            if p.parent is not None:
                problems.append(f"{where}: budget parameter cannot be conditional")
        if (p.parent is None) != (p.parent_values is None or len(p.parent_values) == 0):
            problems.append(f"{where}: parent and parent_values must be given together")
        if p.parent is not None:
            if p.parent == p.id:
                problems.append(f"{where}: cannot be its own parent")
            elif p.parent not in seen:
                problems.append(f"{where}: parent {p.parent!r} not declared before it")
            else:
                par = seen[p.parent]
                if par.kind != "categorical":
                    problems.append(f"{where}: parent {p.parent!r} is not categorical")
                elif p.parent_values and not set(p.parent_values) <= set(par.levels):
                    problems.append(f"{where}: parent_values not a subset of parent levels")
        seen[p.id] = p
    if len(budget_ids) > 1:
        problems.append(f"more than one budget parameter: {budget_ids}")
    if sum(1 for p in params if not p.budget) < 1:
        problems.append("space needs at least one non-budget parameter")
    return problems


@dataclass(frozen=True)
class SearchSpace:
    name: str
    params: tuple[ParamDef, ...]
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        problems = _check_params(self.name, self.params)
        if problems:
            raise SpaceValidationError(problems)
        object.__setattr__(self, "_by_id", {p.id: p for p in self.params})

    def __getitem__(self, pid: str) -> ParamDef:
        return self._by_id[pid]

    def __contains__(self, pid: str) -> bool:
        return pid in self._by_id

    @property
    def budget_param(self) -> ParamDef | None:
        for p in self.params:
            if p.budget:
                return p
        return None

    @property
    def dim(self) -> int:
        """Number of non-budget parameters."""
        return sum(1 for p in self.params if not p.budget)

    @property
    def is_conditional(self) -> bool:
        return any(p.is_conditional for p in self.params)

    def is_active(self, pid: str, values: dict) -> bool:
        """Whether parameter `pid` exists under the (partial) assignment."""
        p = self._by_id[pid]
        while p.parent is not None:
            if values.get(p.parent) not in p.parent_values:
                return False
            p = self._by_id[p.parent]
        return True

    def active_params(self, values: dict) -> list[ParamDef]:
        return [p for p in self.params if self.is_active(p.id, values)]

    def config_key(self, config: Configuration) -> tuple:
        """Canonical hashable identity of a configuration."""
        return tuple((p.id, config.values[p.id]) for p in self.params if p.id in config.values)

    def with_value(self, config: Configuration, pid: str, value) -> Configuration:
        new = dict(config.values)
        new[pid] = value
        return Configuration(new)


# ---------------------------------------------------------------------------
# JSON round trip

_PARAM_KEYS = {"id", "kind", "lower", "upper", "log", "levels", "parent", "parent_values", "budget"}


def parse_space(text: str) -> SearchSpace:
    """Parse a JSON space document.

    Raises SpaceParseError (with character position) on syntax errors and
    SpaceValidationError (listing every problem found) on semantic ones.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpaceParseError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}", e.pos) from e

    problems: list[str] = []
    if not isinstance(doc, dict):
        raise SpaceValidationError(["top level must be an object"])
    unknown = sorted(set(doc) - {"name", "params"})
    if unknown:
        problems.append(f"unknown top-level keys: {unknown}")
    name = doc.get("name")
    raw_params = doc.get("params")
    if not isinstance(raw_params, list):
        problems.append("'params' must be a list")
        raise SpaceValidationError(problems)

    params = []
    for i, rp in enumerate(raw_params):
        if not isinstance(rp, dict):
            problems.append(f"param #{i}: must be an object")
            continue
        label = rp.get("id", f"#{i}")
        unknown = sorted(set(rp) - _PARAM_KEYS)
        if unknown:
            problems.append(f"param {label!r}: unknown keys {unknown}")
            continue
        missing = {"id", "kind"} - set(rp)
        if missing:
            problems.append(f"param {label!r}: missing keys {sorted(missing)}")
            continue
        for key, types in (("id", str), ("kind", str), ("parent", str)):
            if rp.get(key) is not None and not isinstance(rp[key], types):
                problems.append(f"param {label!r}: {key} must be a string")
        for key in ("lower", "upper"):
            v = rp.get(key)
            if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
                problems.append(f"param {label!r}: {key} must be a number")
        for key in ("log", "budget"):
            if not isinstance(rp.get(key, False), bool):
                problems.append(f"param {label!r}: {key} must be a boolean")
        for key in ("levels", "parent_values"):
            v = rp.get(key)
            if v is not None and not isinstance(v, list):
                problems.append(f"param {label!r}: {key} must be a list")
        if problems and problems[-1].startswith(f"param {label!r}"):
            continue
        params.append(ParamDef(
            id=rp["id"],
            kind=rp["kind"],
            lower=None if rp.get("lower") is None else float(rp["lower"]),
            upper=None if rp.get("upper") is None else float(rp["upper"]),
            log=rp.get("log", False),
            levels=None if rp.get("levels") is None else tuple(rp["levels"]),
            parent=rp.get("parent"),
            parent_values=None if rp.get("parent_values") is None else tuple(rp["parent_values"]),
            budget=rp.get("budget", False),
        ))
    if problems:
        raise SpaceValidationError(problems)
    return SearchSpace(name=name, params=tuple(params))


def serialize_space(space: SearchSpace) -> str:
    """Inverse of parse_space; emits only the keys a parameter actually uses."""
    out = {"name": space.name, "params": []}
    for p in space.params:
        rp: dict = {"id": p.id, "kind": p.kind}
        if p.is_numeric:
            rp["lower"] = p.lower
            rp["upper"] = p.upper
            if p.log:
                rp["log"] = True
        else:
            rp["levels"] = list(p.levels)
        if p.parent is not None:
            rp["parent"] = p.parent
            rp["parent_values"] = list(p.parent_values)
        if p.budget:
            rp["budget"] = True
        out["params"].append(rp)
    return json.dumps(out, indent=2)


def space_hash(space: SearchSpace) -> str:
    return hashlib.sha256(serialize_space(space).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Sampling and validation

def _sample_value(p: ParamDef, rng: np.random.Generator):
    if p.kind == "categorical":
        return p.levels[int(rng.integers(len(p.levels)))]
    if p.kind == "continuous":
        if p.log:
            return float(np.exp(rng.uniform(np.log(p.lower), np.log(p.upper))))
        return float(rng.uniform(p.lower, p.upper))
    # integer
    if p.log:
        v = int(round(float(np.exp(rng.uniform(np.log(p.lower), np.log(p.upper))))))
        return int(min(max(v, p.lower), p.upper))
    return int(rng.integers(int(p.lower), int(p.upper) + 1))


def sample(space: SearchSpace, rng: np.random.Generator, n: int = 1) -> list[Configuration]:
    """Draw n configurations uniformly; conditional children only when active.

    Numeric values are uniform on the (log-transformed, where flagged)
    interval; the budget parameter, if any, is sampled like any other.
    """
    out = []
    for _ in range(n):
        values: dict = {}
        for p in space.params:
            if space.is_active(p.id, values):
                values[p.id] = _sample_value(p, rng)
        out.append(Configuration(values))
    return out


def _check_value(p: ParamDef, v) -> str | None:
    if p.kind == "categorical":
        if v not in p.levels:
            return f"param {p.id!r}: value {v!r} not among levels"
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
        return f"param {p.id!r}: value {v!r} is not numeric"
    if not math.isfinite(float(v)):
        return f"param {p.id!r}: value must be finite"
    if p.kind == "integer" and float(v) != int(v):
        return f"param {p.id!r}: value {v!r} is not an integer"
    if not (p.lower <= float(v) <= p.upper):
        return f"param {p.id!r}: value {v!r} outside [{p.lower}, {p.upper}]"
    return None


def validate(space: SearchSpace, config: Configuration) -> ValidationReport:
    """Check a configuration against the space; empty report iff valid."""
    violations: list[str] = []
    values = config.values
    for pid in values:
        if pid not in space:
            violations.append(f"unknown parameter {pid!r}")
    for p in space.params:
        active = space.is_active(p.id, values)
        present = p.id in values
        if active and not present:
            violations.append(f"param {p.id!r}: active but missing")
        elif not active and present:
            violations.append(f"param {p.id!r}: inactive but present")
        elif present:
            err = _check_value(p, values[p.id])
            if err:
                violations.append(err)
    return ValidationReport(tuple(violations))


# ---------------------------------------------------------------------------
# Encoding: numeric -> [0,1] (log where flagged), categorical -> one-hot,
# conditional params get a leading activity bit and zero-imputed values.

def encoded_width(space: SearchSpace) -> int:
    w = 0
    for p in space.params:
        w += 1 if p.is_conditional else 0
        w += len(p.levels) if p.kind == "categorical" else 1
    return w


def encoding_columns(space: SearchSpace) -> list[tuple[str, int, int]]:
    """(param id, first column, width) triples, in declaration order."""
    out = []
    col = 0
    for p in space.params:
        w = (1 if p.is_conditional else 0) + (len(p.levels) if p.kind == "categorical" else 1)
        out.append((p.id, col, w))
        col += w
    return out


def _unit_scale(p: ParamDef, v: float) -> float:
    if p.log:
        return (math.log(v) - math.log(p.lower)) / (math.log(p.upper) - math.log(p.lower))
    return (v - p.lower) / (p.upper - p.lower)


def _unit_unscale(p: ParamDef, t: float) -> float:
    if p.log:
        return math.exp(math.log(p.lower) + t * (math.log(p.upper) - math.log(p.lower)))
    return p.lower + t * (p.upper - p.lower)


def encode(space: SearchSpace, config: Configuration) -> np.ndarray:
    x = np.zeros(encoded_width(space))
    col = 0
    values = config.values
    for p in space.params:
        present = p.id in values
        if p.is_conditional:
            x[col] = 1.0 if present else 0.0
            col += 1
        if p.kind == "categorical":
            if present:
                x[col + p.levels.index(values[p.id])] = 1.0
            col += len(p.levels)
        else:
            if present:
                x[col] = _unit_scale(p, float(values[p.id]))
            col += 1
    return x


def encode_matrix(space: SearchSpace, configs: list[Configuration]) -> np.ndarray:
    """Columnar batch version of encode()."""
    n = len(configs)
    X = np.zeros((n, encoded_width(space)))
    col = 0
    for p in space.params:
        raw = [c.values.get(p.id) for c in configs]
        present = np.array([v is not None for v in raw])
        if p.is_conditional:
            X[:, col] = present.astype(float)
            col += 1
        if p.kind == "categorical":
            level_idx = {lv: i for i, lv in enumerate(p.levels)}
            for i, v in enumerate(raw):
                if v is not None:
                    X[i, col + level_idx[v]] = 1.0
            col += len(p.levels)
        else:
            vals = np.array([0.0 if v is None else float(v) for v in raw])
            if p.log:
                lo, hi = math.log(p.lower), math.log(p.upper)
                scaled = (np.log(np.where(present, vals, 1.0)) - lo) / (hi - lo)
            else:
                scaled = (vals - p.lower) / (p.upper - p.lower)
            X[:, col] = np.where(present, scaled, 0.0)
            col += 1
    return X


def sample_encoded(space: SearchSpace, rng: np.random.Generator, n: int,
                   fidelity: float | None = None):
    """Draw n uniform configurations directly in encoded form.

    Returns (X, decode) where X is the (n, p) encoded matrix and decode(i)
    materializes row i as a Configuration. Distribution matches sample():
    numeric uniform on the (log) interval, integers uniform over their range,
    categoricals uniform over levels, children only when active. `fidelity`
    pins the budget parameter instead of sampling it.
    """
    cols: dict[str, np.ndarray] = {}
    active: dict[str, np.ndarray] = {}
    X = np.zeros((n, encoded_width(space)))
    col = 0
    for p in space.params:
        if p.parent is None:
            act = np.ones(n, dtype=bool)
        else:
            pv = cols[p.parent]
            par_act = active[p.parent]
            lvmask = np.isin(pv, np.array(p.parent_values, dtype=object))
            act = par_act & lvmask
        active[p.id] = act
        if p.is_conditional:
            X[:, col] = act.astype(float)
            col += 1
        if p.kind == "categorical":
            idx = rng.integers(len(p.levels), size=n)
            cols[p.id] = np.array(p.levels, dtype=object)[idx]
            onehot_rows = np.flatnonzero(act)
            X[onehot_rows, col + idx[onehot_rows]] = 1.0
            col += len(p.levels)
        else:
            if p.budget and fidelity is not None:
                vals = np.full(n, float(fidelity))
            elif p.kind == "integer":
                if p.log:
                    raw = np.exp(rng.uniform(math.log(p.lower), math.log(p.upper), size=n))
                    vals = np.clip(np.round(raw), p.lower, p.upper)
                else:
                    vals = rng.integers(int(p.lower), int(p.upper) + 1, size=n).astype(float)
            else:
                if p.log:
                    vals = np.exp(rng.uniform(math.log(p.lower), math.log(p.upper), size=n))
                else:
                    vals = rng.uniform(p.lower, p.upper, size=n)
            cols[p.id] = vals
            if p.log:
                lo, hi = math.log(p.lower), math.log(p.upper)
                scaled = (np.log(vals) - lo) / (hi - lo)
            else:
                scaled = (vals - p.lower) / (p.upper - p.lower)
            X[:, col] = np.where(act, scaled, 0.0)
            col += 1

    def decode(i: int) -> Configuration:
        values = {}
        for p in space.params:
            if active[p.id][i]:
                v = cols[p.id][i]
                values[p.id] = int(v) if p.kind == "integer" else (v if p.kind == "categorical" else float(v))
        return Configuration(values)

    return X, decode


# ---------------------------------------------------------------------------
# Grids

def _axis_points(p: ParamDef, k: int) -> list:
    if p.kind == "categorical":
        return list(p.levels)
    if p.log:
        vals = np.exp(np.linspace(math.log(p.lower), math.log(p.upper), k))
        vals[0], vals[-1] = p.lower, p.upper
        vals = np.clip(vals, p.lower, p.upper)
    else:
        vals = np.linspace(p.lower, p.upper, k)
    if p.kind == "integer":
        ints = [int(v) for v in np.rint(vals)]
        seen, out = set(), []
        for v in ints:
            if v not in seen:
                seen.add(v)
                out.append(v)
        return out
    return [float(v) for v in vals]


def _points_per_axis(cap: int, d: int) -> int:
    # largest integer k with k^d <= cap; cap**(1/d) alone can round through
    # an exact power (e.g. (10**6)**(1/3) -> 99.999...)
    k = max(int(cap ** (1.0 / d)), 1)
    while (k + 1) ** d <= cap:
        k += 1
    while k > 1 and k ** d > cap:
        k -= 1
    return k


def default_budget_levels(p: ParamDef) -> list[float]:
    """The 2^x fidelity ladder rescaled affinely into the budget bounds."""
    f0 = DEFAULT_BUDGET_FRACTIONS[0]
    out = [p.lower + (f - f0) / (1.0 - f0) * (p.upper - p.lower) for f in DEFAULT_BUDGET_FRACTIONS]
    out[0], out[-1] = p.lower, p.upper
    return out


def make_grid(space: SearchSpace, non_budget_cap: int,
              budget_levels: list[float] | None = None) -> list[Configuration]:
    """Cross product of per-parameter axes, crossed with the budget ladder.

    Each non-budget axis gets k = floor(non_budget_cap^(1/D)) equidistant
    points (log-spaced where flagged; all levels for categoricals; integer
    axes deduplicate after rounding). Conditional spaces have no product
    structure and are rejected. Axes iterate in declaration order with the
    rightmost varying fastest.
    """
    if space.is_conditional:
        raise GridError("grids require an unconditional space")
    non_budget = [p for p in space.params if not p.budget]
    d = len(non_budget)
    if non_budget_cap < 2 ** d:
        raise GridError(f"cap {non_budget_cap} too small for {d} dimensions (needs >= 2^{d})")
    k = _points_per_axis(non_budget_cap, d)

    bp = space.budget_param
    if bp is not None:
        if budget_levels is None:
            budget_levels = default_budget_levels(bp)
        else:
            budget_levels = [float(b) for b in budget_levels]
            for b in budget_levels:
                if not (bp.lower <= b <= bp.upper):
                    raise GridError(f"budget level {b} outside [{bp.lower}, {bp.upper}]")

    axes = []
    total = 1
    for p in space.params:
        pts = budget_levels if p.budget else _axis_points(p, k)
        axes.append(pts)
        total *= len(pts)
    cap_total = non_budget_cap * (len(budget_levels) if bp is not None else 1)
    if total > cap_total:
        raise GridError(f"grid of {total} rows exceeds cap {cap_total} "
                        "(a categorical axis has more levels than the cap allows)")

    ids = [p.id for p in space.params]
    return [Configuration(dict(zip(ids, combo))) for combo in itertools.product(*axes)]


class GridIndex:
    """Nearest-member lookup over a fixed grid, in encoded space.

    Ties in Euclidean distance resolve to the lowest grid index.
    """

    def __init__(self, space: SearchSpace, grid: list[Configuration]):
        if not grid:
            raise GridError("empty grid")
        self.space = space
        self.grid = grid
        self._X = encode_matrix(space, grid)
        self._tree = cKDTree(self._X)
        self._key_to_index = {space.config_key(c): i for i, c in enumerate(grid)}

    def __len__(self) -> int:
        return len(self.grid)

    def encoded(self) -> np.ndarray:
        """The (rows, width) encoded grid matrix backing the index."""
        return self._X

    def lookup(self, config: Configuration) -> int | None:
        """Exact-membership index, or None."""
        return self._key_to_index.get(self.space.config_key(config))

    def round(self, config: Configuration) -> int:
        x = encode(self.space, config)
        d0, i0 = self._tree.query(x)
        if d0 == 0.0:
            return int(i0)
        candidates = self._tree.query_ball_point(x, d0 * (1.0 + 1e-9))
        diffs = self._X[candidates] - x
        d2 = np.einsum("ij,ij->i", diffs, diffs)
        best = d2.min()
        return min(int(candidates[j]) for j in range(len(candidates)) if d2[j] == best)


def round_to_grid(space: SearchSpace, grid: list[Configuration], config: Configuration) -> int:
    """Index of the grid member nearest to config in encoded Euclidean
    distance; exact ties go to the lowest index."""
    return GridIndex(space, grid).round(config)
