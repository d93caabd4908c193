"""Single-objective optimizers: random search, expected-improvement Bayesian
optimization over three surrogate families and three acquisition optimizers,
and Hyperband.

All budgets are in full-fidelity equivalents. Only Hyperband evaluates below
full fidelity; the others pin the budget parameter at its upper bound. Every
run is a pure function of (instance, budget, seed).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .instances import EvalRecord, Instance, orient
from .models import (FitError, GPConfig, MLPConfig, RFConfig, encode_dataset,
                     ensemble_predict_dist, fit_gp, fit_mlp_ensemble, fit_rf,
                     gp_predict, nelder_mead, rf_predict)
from .space import Configuration, sample, sample_encoded

log = logging.getLogger(__name__)

EPS = 1e-9

SURROGATE_KINDS = ("gp", "rf", "nn")
ACQ_OPTIMIZERS = ("random", "nelder_mead", "exhaustive")

N_ACQ_PROBES = 10_000
N_NM_PROBES = 100
NM_REL_TOL = 1e-4


@dataclass
class Trajectory:
    instance_id: str
    optimizer_id: str
    seed: int
    budget: float
    directions: tuple[str, ...]
    records: list[EvalRecord] = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        return self.records[-1].cumulative_cost if self.records else 0.0

    def append(self, config: Configuration, values: tuple[float, ...], cost: float) -> None:
        cum = self.total_cost + cost
        self.records.append(EvalRecord(iteration=len(self.records), config=config,
                                       objectives=tuple(float(v) for v in values),
                                       cost=cost, cumulative_cost=cum))

    def best_so_far(self) -> np.ndarray:
        """Running best of the first target, honouring its direction.

        Empty for multi-objective trajectories, where no scalar incumbent
        exists.
        """
        if len(self.directions) != 1 or not self.records:
            return np.array([])
        v = np.array([r.objectives[0] for r in self.records])
        return (np.minimum.accumulate(v) if self.directions[0] == "minimize"
                else np.maximum.accumulate(v))


@dataclass(frozen=True)
class BOConfig:
    surrogate_kind: str = "gp"
    acq_optimizer: str = "random"
    n_probes: int = N_ACQ_PROBES

    def __post_init__(self):
        if self.surrogate_kind not in SURROGATE_KINDS:
            raise ValueError(f"unknown surrogate kind {self.surrogate_kind!r}")
        if self.acq_optimizer not in ACQ_OPTIMIZERS:
            raise ValueError(f"unknown acquisition optimizer {self.acq_optimizer!r}")


def expected_improvement(mean, sd, best):
    """EI for minimization: (best-mean)*Phi(u) + sd*phi(u) with
    u = (best-mean)/sd; the sd=0 limit is max(best-mean, 0)."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if np.any(sd < 0):
        raise ValueError("sd must be nonnegative")
    diff = best - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(sd > 0, diff / np.where(sd > 0, sd, 1.0), 0.0)
        ei = np.where(sd > 0, diff * norm.cdf(u) + sd * norm.pdf(u), np.maximum(diff, 0.0))
    if ei.ndim == 0:
        return float(ei)
    return ei


def _pin_full_fidelity(instance: Instance, config: Configuration) -> Configuration:
    bp = instance.space.budget_param
    if bp is None:
        return config
    return instance.space.with_value(config, bp.id, bp.upper)


def _sample_full(instance: Instance, rng: np.random.Generator, n: int) -> list[Configuration]:
    return [_pin_full_fidelity(instance, c) for c in sample(instance.space, rng, n)]


def run_random_search(instance: Instance, budget: float, seed: int,
                      optimizer_id: str = "rs") -> Trajectory:
    """Uniform sampling at full fidelity until the next evaluation would
    exceed the budget."""
    if budget < 1:
        raise ValueError("budget must be at least one full-fidelity evaluation")
    rng = np.random.default_rng(seed)
    traj = Trajectory(instance.id, optimizer_id, seed, float(budget), instance.directions)
    while traj.total_cost + 1.0 <= budget + EPS:
        c = _sample_full(instance, rng, 1)[0]
        ov = instance.evaluate(c)
        traj.append(c, ov.values, ov.cost)
    return traj


# ---------------------------------------------------------------------------
# Bayesian optimization

def _fit_surrogate(kind: str, instance: Instance, configs, y: np.ndarray, seed: int):
    data = encode_dataset(instance.space, configs, y[:, None])
    if kind == "gp":
        model = fit_gp(data, GPConfig(), seed=seed)
        return lambda X: gp_predict(model, X)
    if kind == "rf":
        model = fit_rf(data, RFConfig(), seed=seed)
        return lambda X: rf_predict(model, X)
    model = fit_mlp_ensemble(data, MLPConfig(), seed=seed)
    return lambda X: ensemble_predict_dist(model, X)


def _ei_over(predict, X: np.ndarray, best: float) -> np.ndarray:
    mean, sd = predict(X)
    return np.asarray(expected_improvement(mean.ravel(), sd.ravel(), best))


def _propose_random(instance, predict, best, rng, n_probes):
    X, decode = sample_encoded(instance.space, rng, n_probes,
                               fidelity=_full_fidelity_value(instance))
    ei = _ei_over(predict, X, best)
    return decode(int(np.argmax(ei)))


def _full_fidelity_value(instance: Instance) -> float | None:
    bp = instance.space.budget_param
    return None if bp is None else bp.upper


def _propose_nelder_mead(instance, predict, best, rng, n_probes):
    """Start from the best of `n_probes` random probes, then refine the
    active numeric coordinates in encoded space."""
    space = instance.space
    X, decode = sample_encoded(space, rng, n_probes, fidelity=_full_fidelity_value(instance))
    ei = _ei_over(predict, X, best)
    i0 = int(np.argmax(ei))
    x0_full, start = X[i0].copy(), decode(i0)

    free: list[int] = []
    col = 0
    for p in space.params:
        if p.is_conditional:
            col += 1
        if p.kind == "categorical":
            col += len(p.levels)
        else:
            if not p.budget and p.id in start.values:
                free.append(col)
            col += 1
    if not free:
        return start

    def neg_ei(t: np.ndarray) -> float:
        x = x0_full.copy()
        x[free] = np.clip(t, 0.0, 1.0)
        return -float(_ei_over(predict, x[None, :], best)[0])

    t_best, _, _ = nelder_mead(neg_ei, x0_full[free], step=0.1, rel_tol=NM_REL_TOL)
    x = x0_full.copy()
    x[free] = np.clip(t_best, 0.0, 1.0)

    values = dict(start.values)
    col = 0
    for p in space.params:
        if p.is_conditional:
            col += 1
        if p.kind == "categorical":
            col += len(p.levels)
        else:
            if col in free:
                v = _decode_unit(p, x[col])
                values[p.id] = v
            col += 1
    return Configuration(values)


def _decode_unit(p, t: float):
    if p.log:
        lo, hi = math.log(p.lower), math.log(p.upper)
        v = math.exp(lo + t * (hi - lo))
    else:
        v = p.lower + t * (p.upper - p.lower)
    if p.kind == "integer":
        return int(min(max(round(v), p.lower), p.upper))
    return float(min(max(v, p.lower), p.upper))


def run_bo(instance: Instance, cfg: BOConfig, budget: float, seed: int,
           optimizer_id: str | None = None) -> Trajectory:
    """EI-driven BO: uniform initial design of 5*D full-fidelity points, then
    refit the surrogate from scratch each iteration and evaluate the
    acquisition maximizer. A failed fit falls back to one uniform random
    proposal (logged)."""
    space = instance.space
    D = space.dim
    n_init = 5 * D
    if budget <= n_init:
        raise ValueError(f"budget must exceed the initial design size {n_init}")
    if cfg.acq_optimizer == "exhaustive" and instance.tabular is None:
        raise ValueError("exhaustive acquisition requires a tabular instance")

    rng = np.random.default_rng(seed)
    suffix = {"random": "rs", "nelder_mead": "nm", "exhaustive": "ex"}[cfg.acq_optimizer]
    oid = optimizer_id or f"bo-{cfg.surrogate_kind}-{suffix}"
    traj = Trajectory(instance.id, oid, seed, float(budget), instance.directions)
    traj.notes["fallbacks"] = 0

    tab = instance.tabular
    remaining: list[int] = []
    if cfg.acq_optimizer == "exhaustive":
        rows = tab.full_fidelity_rows(space)
        pick = rng.choice(len(rows), size=min(n_init, len(rows)), replace=False)
        init = [tab.grid[rows[i]] for i in pick]
        chosen = set(int(rows[i]) for i in pick)
        remaining = [int(r) for r in rows if int(r) not in chosen]
    else:
        init = _sample_full(instance, rng, n_init)

    for c in init:
        if traj.total_cost + 1.0 > budget + EPS:
            return traj
        ov = instance.evaluate(c)
        traj.append(c, ov.values, ov.cost)

    while traj.total_cost + 1.0 <= budget + EPS:
        if cfg.acq_optimizer == "exhaustive" and not remaining:
            break
        configs = [r.config for r in traj.records]
        y = orient(instance, np.array([r.objectives for r in traj.records]))[:, 0]
        best = float(y.min())
        proposal = None
        try:
            predict = _fit_surrogate(cfg.surrogate_kind, instance, configs, y,
                                     seed=int(rng.integers(2 ** 63)))
            if cfg.acq_optimizer == "random":
                proposal = _propose_random(instance, predict, best, rng, cfg.n_probes)
            elif cfg.acq_optimizer == "nelder_mead":
                proposal = _propose_nelder_mead(instance, predict, best, rng, N_NM_PROBES)
            else:
                Xc = tab.index.encoded()[remaining]
                ei = _ei_over(predict, Xc, best)
                j = int(np.argmax(ei))
                proposal = tab.grid[remaining.pop(j)]
        except FitError as e:
            traj.notes["fallbacks"] += 1
            log.info("iteration %d: surrogate fit failed (%s); random proposal",
                     len(traj.records), e)
            if cfg.acq_optimizer == "exhaustive":
                j = int(rng.integers(len(remaining)))
                proposal = tab.grid[remaining.pop(j)]
            else:
                proposal = _sample_full(instance, rng, 1)[0]
        ov = instance.evaluate(proposal)
        traj.append(proposal, ov.values, ov.cost)
    return traj


# ---------------------------------------------------------------------------
# Hyperband

def hyperband_schedule(eta: int, r_min_fraction: float) -> list[dict]:
    """Closed-form bracket schedule for R = 1. Each bracket lists its rungs
    as (n_i, r_i) with n_{i+1} = floor(n_i / eta), r_{i+1} = r_i * eta."""
    if eta < 2:
        raise ValueError("eta must be at least 2")
    s_max = int(math.floor(math.log(1.0 / r_min_fraction, eta) + 1e-12))
    brackets = []
    for s in range(s_max, -1, -1):
        n = math.ceil((s_max + 1) / (s + 1) * eta ** s)
        r = eta ** (-s)
        rungs = []
        n_i, r_i = n, r
        for _ in range(s + 1):
            rungs.append((n_i, r_i))
            n_i, r_i = n_i // eta, r_i * eta
            if n_i == 0:
                break
        brackets.append({"s": s, "n": n, "r": r, "rungs": rungs})
    return brackets


def run_hyperband(instance: Instance, budget: float, seed: int, eta: int = 3,
                  optimizer_id: str = "hb") -> Trajectory:
    """Bracket loop over successive halving, cycling through brackets until
    the next rung would not fit in the remaining budget.

    Rung fidelity is the fraction r_i of the budget parameter's upper bound;
    survivors are the floor(n_i/eta) best observations at the rung fidelity.
    On tabular instances each evaluation's charged cost is the rounded row's
    fidelity, so rung costs are computed from the actual rows.
    """
    bp = instance.space.budget_param
    if bp is None:
        raise ValueError("Hyperband needs a budget parameter")
    rng = np.random.default_rng(seed)
    traj = Trajectory(instance.id, optimizer_id, seed, float(budget), instance.directions)
    brackets = hyperband_schedule(eta, bp.lower / bp.upper)
    tab = instance.tabular

    def rung_cost(configs: list[Configuration]) -> float:
        if tab is None:
            return float(sum(c[bp.id] / bp.upper for c in configs))
        return float(sum(tab.costs[tab.round_index(c)] for c in configs))

    done = False
    while not done:
        for bracket in brackets:
            survivors: list[Configuration] = []
            for rung_idx, (n_i, r_i) in enumerate(bracket["rungs"]):
                if rung_idx == 0:
                    base = sample(instance.space, rng, n_i)
                    configs = [instance.space.with_value(c, bp.id, r_i * bp.upper)
                               for c in base]
                else:
                    configs = [instance.space.with_value(c, bp.id, r_i * bp.upper)
                               for c in survivors]
                if traj.total_cost + rung_cost(configs) > budget + EPS:
                    done = True
                    break
                observed = []
                for c in configs:
                    ov = instance.evaluate(c)
                    traj.append(c, ov.values, ov.cost)
                    observed.append(float(orient(instance, ov.values)[0]))
                k = len(configs) // eta
                if k == 0:
                    break
                order = np.argsort(np.array(observed), kind="stable")[:k]
                survivors = [configs[int(i)] for i in order]
            if done:
                break
    return traj


# ---------------------------------------------------------------------------
# Registry

def _bo_runner(kind: str, acq: str):
    def run(instance: Instance, budget: float, seed: int) -> Trajectory:
        suffix = {"random": "rs", "nelder_mead": "nm", "exhaustive": "ex"}[acq]
        return run_bo(instance, BOConfig(surrogate_kind=kind, acq_optimizer=acq),
                      budget, seed, optimizer_id=f"bo-{kind}-{suffix}")
    return run


OPTIMIZERS: dict[str, "callable"] = {"rs": run_random_search, "hb": run_hyperband}
for _kind in SURROGATE_KINDS:
    for _acq, _suffix in (("random", "rs"), ("nelder_mead", "nm"), ("exhaustive", "ex")):
        OPTIMIZERS[f"bo-{_kind}-{_suffix}"] = _bo_runner(_kind, _acq)
