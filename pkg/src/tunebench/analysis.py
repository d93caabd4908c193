"""Evaluation statistics over finished runs: normalized regret, mean ranks,
Kemeny consensus with Kendall distance, Friedman and Nemenyi tests, ECDF
curves, and hypervolume trajectories.

Everything here is a pure function of trajectories or plain arrays; file
reading and report writing live in the runner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .models import _fractional_ranks
from .optim_mo import HVContext, ParetoArchive, hypervolume
from .optim_so import Trajectory


class AnalysisError(ValueError):
    pass


class DegenerateRangeError(AnalysisError):
    """All pooled evaluations share one objective value."""


ANYTIME_FRACTIONS = tuple(round(0.10 + 0.05 * i, 2) for i in range(19))


# ---------------------------------------------------------------------------
# Normalized regret

@dataclass
class RegretCurve:
    instance_id: str
    optimizer_id: str
    replication: int
    budgets: np.ndarray           # cumulative budget at each evaluation
    regrets: np.ndarray           # normalized best-so-far, stepwise
    nominal_budget: float

    def at(self, t: float) -> float:
        """Step value at budget t; 1.0 before the first evaluation lands."""
        i = int(np.searchsorted(self.budgets, t, side="right")) - 1
        return float(self.regrets[i]) if i >= 0 else 1.0


def normalized_regret(trajectories: list[Trajectory]) -> list[RegretCurve]:
    """Regret scaled by the pooled objective range of every evaluation of
    every method and replication on the instance."""
    if not trajectories:
        raise AnalysisError("no trajectories")
    ids = {t.instance_id for t in trajectories}
    if len(ids) != 1:
        raise AnalysisError(f"trajectories span several instances: {sorted(ids)}")
    direction = trajectories[0].directions[0]
    sign = 1.0 if direction == "minimize" else -1.0

    pooled = np.concatenate([[sign * r.objectives[0] for r in t.records]
                             for t in trajectories if t.records])
    best, worst = float(pooled.min()), float(pooled.max())
    if best == worst:
        raise DegenerateRangeError("all evaluations share one objective value")

    curves = []
    for t in trajectories:
        y = np.minimum.accumulate(np.array([sign * r.objectives[0] for r in t.records]))
        curves.append(RegretCurve(
            instance_id=t.instance_id,
            optimizer_id=t.optimizer_id,
            replication=t.seed,
            budgets=np.array([r.cumulative_cost for r in t.records]),
            regrets=(y - best) / (worst - best),
            nominal_budget=float(t.budget),
        ))
    return curves


@dataclass
class RankMatrix:
    instances: list[str]
    optimizers: list[str]
    ranks: np.ndarray             # (n_instances, n_optimizers) average ranks


def mean_ranks(curves: list[RegretCurve], at_budget_fraction: float) -> RankMatrix:
    """Rank optimizers per (instance, replication) by regret at the given
    fraction of each run's own nominal budget (ties averaged), then average
    the ranks over replications."""
    instances = sorted({c.instance_id for c in curves})
    optimizers = sorted({c.optimizer_id for c in curves})
    by_key: dict[tuple, dict[int, RegretCurve]] = {}
    for c in curves:
        by_key.setdefault((c.instance_id, c.optimizer_id), {})[c.replication] = c

    ranks = np.empty((len(instances), len(optimizers)))
    for bi, inst in enumerate(instances):
        reps = None
        for opt in optimizers:
            cell = by_key.get((inst, opt))
            if cell is None:
                raise AnalysisError(f"no runs of {opt!r} on {inst!r}")
            if reps is None:
                reps = sorted(cell)
            elif sorted(cell) != reps:
                raise AnalysisError(f"replication sets differ on {inst!r}")
        per_rep = []
        for rep in reps:
            vals = np.array([by_key[(inst, opt)][rep].at(
                at_budget_fraction * by_key[(inst, opt)][rep].nominal_budget)
                for opt in optimizers])
            per_rep.append(_fractional_ranks(vals))
        ranks[bi] = np.mean(per_rep, axis=0)
    return RankMatrix(instances=instances, optimizers=optimizers, ranks=ranks)


# ---------------------------------------------------------------------------
# Rank aggregation

def kendall_distance(order_a, order_b) -> int:
    """Number of discordant pairs between two linear orders over one item
    set."""
    a, b = list(order_a), list(order_b)
    if len(set(a)) != len(a) or len(set(b)) != len(b) or set(a) != set(b):
        raise AnalysisError("orders must be permutations of the same items")
    pos = {item: i for i, item in enumerate(b)}
    d = 0
    for i in range(len(a)):
        for j in range(i + 1, len(a)):
            if pos[a[i]] > pos[a[j]]:
                d += 1
    return d


@dataclass
class ConsensusResult:
    order: tuple
    total_distance: int
    reference_distance: int | None = None


def kemeny_consensus(rankings: list, reference=None) -> ConsensusResult:
    """Linear order minimizing the summed Kendall distance to the inputs.

    Exact search over all k! orders, organised as a dynamic program over
    prefixes so k = 10 stays instant; ties resolve to the lexicographically
    smallest order. An optional reference order yields the Kendall distance
    of the consensus to it.
    """
    if not rankings:
        raise AnalysisError("need at least one ranking")
    items = sorted(rankings[0])
    k = len(items)
    if k > 10:
        raise AnalysisError("consensus search supports at most 10 items")
    for r in rankings:
        if sorted(r) != items:
            raise AnalysisError("rankings must share one item set")

    idx = {item: i for i, item in enumerate(items)}
    # pair_cost[i][j]: inputs that would be discordant with i placed before j
    pair_cost = np.zeros((k, k), dtype=int)
    for r in rankings:
        pos = {item: p for p, item in enumerate(r)}
        for i in range(k):
            for j in range(k):
                if i != j and pos[items[i]] > pos[items[j]]:
                    pair_cost[i][j] += 1

    # suffix_cost[S]: minimal cost of ordering the item set S among itself
    full = (1 << k) - 1
    suffix_cost = np.full(1 << k, -1, dtype=np.int64)
    suffix_cost[0] = 0
    for S in range(1, 1 << k):
        best = None
        for j in range(k):
            if not S & (1 << j):
                continue
            rest = S & ~(1 << j)
            lead = sum(int(pair_cost[j][l]) for l in range(k) if rest & (1 << l))
            cand = lead + int(suffix_cost[rest])
            if best is None or cand < best:
                best = cand
        suffix_cost[S] = best

    order = []
    S = full
    while S:
        for j in range(k):                      # ascending = lexicographic preference
            if not S & (1 << j):
                continue
            rest = S & ~(1 << j)
            lead = sum(int(pair_cost[j][l]) for l in range(k) if rest & (1 << l))
            if lead + int(suffix_cost[rest]) == int(suffix_cost[S]):
                order.append(items[j])
                S = rest
                break

    result = ConsensusResult(order=tuple(order), total_distance=int(suffix_cost[full]))
    if reference is not None:
        result.reference_distance = kendall_distance(order, reference)
    return result


# ---------------------------------------------------------------------------
# Friedman / Nemenyi

def friedman_test(ranks) -> tuple[float, float]:
    """Friedman chi-square over an (N benchmarks, k optimizers) rank matrix
    and its p-value from the chi-square distribution with k-1 dof."""
    R = np.asarray(ranks, dtype=float)
    if R.ndim != 2 or R.shape[0] < 2 or R.shape[1] < 2:
        raise AnalysisError("need at least 2 benchmarks and 2 optimizers")
    N, k = R.shape
    col_means = R.mean(axis=0)
    stat = 12.0 * N / (k * (k + 1)) * (float(col_means @ col_means) - k * (k + 1) ** 2 / 4.0)
    return float(stat), float(chi2.sf(stat, k - 1))


# Two-tailed studentized range constants divided by sqrt(2), alpha = 0.05,
# for k = 2..10 (Demsar 2006, Table 5a).
_NEMENYI_Q_05 = {2: 1.960, 3: 2.343, 4: 2.569, 5: 2.728, 6: 2.850,
                 7: 2.949, 8: 3.031, 9: 3.102, 10: 3.164}


def nemenyi_cd(k: int, N: int, alpha: float = 0.05) -> float:
    """Critical difference q_alpha_k * sqrt(k(k+1)/(6N)) for mean-rank
    comparisons; only the tabulated alpha = 0.05 constants are shipped."""
    if alpha != 0.05:
        raise AnalysisError("only alpha = 0.05 constants are tabulated")
    if k not in _NEMENYI_Q_05:
        raise AnalysisError(f"k = {k} outside the table (2..10)")
    if N < 2:
        raise AnalysisError("need N >= 2 benchmarks")
    return _NEMENYI_Q_05[k] * np.sqrt(k * (k + 1) / (6.0 * N))


# ---------------------------------------------------------------------------
# ECDF

@dataclass
class ECDFCurve:
    ts: np.ndarray
    fractions: np.ndarray

    def at(self, t: float) -> float:
        i = int(np.searchsorted(self.ts, t, side="right")) - 1
        return float(self.fractions[i]) if i >= 0 else 0.0


def ecdf(values, grid=None) -> ECDFCurve:
    """Right-continuous empirical distribution F(t) = fraction of values <= t,
    read off at `grid` when given, else at the sorted distinct values."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if len(v) == 0:
        raise AnalysisError("values must be nonempty")
    ts = np.unique(v) if grid is None else np.asarray(grid, dtype=float)
    fractions = np.searchsorted(v, ts, side="right") / len(v)
    return ECDFCurve(ts=ts, fractions=fractions)


# ---------------------------------------------------------------------------
# Hypervolume trajectories

@dataclass
class HVTrajectory:
    budgets: np.ndarray
    hvs: np.ndarray
    n_clipped: int = 0


def hv_trajectory(run: Trajectory, context: HVContext) -> HVTrajectory:
    """Normalized archive hypervolume after each evaluation. Points outside
    the context bounds are clipped into the unit box and counted."""
    if len(run.directions) < 2:
        raise AnalysisError("hypervolume needs at least two targets")
    signs = np.array([1.0 if d == "minimize" else -1.0 for d in run.directions])
    archive = ParetoArchive()
    budgets, hvs = [], []
    n_clipped = 0
    for r in run.records:
        y = signs * np.asarray(r.objectives, dtype=float)
        if np.any(y < context.mins) or np.any(y > context.maxs):
            n_clipped += 1
        archive.insert(r.config, r.objectives, y)
        budgets.append(r.cumulative_cost)
        hvs.append(hypervolume(context.normalize(archive.values()), context.ref))
    return HVTrajectory(budgets=np.array(budgets), hvs=np.array(hvs), n_clipped=n_clipped)
