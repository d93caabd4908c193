"""Multi-objective machinery and optimizers: nondominated sorting, exact and
Monte Carlo hypervolume, Pareto archives, and the runners rs-mo, rs-x4,
parego, mego, ehvi, and mies.

All internals minimize: maximize-oriented targets are negated at ingestion.
Hypervolume is computed on targets normalized to the unit box with the nadir
at (1, ..., 1). Every evaluation is at full fidelity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .instances import Instance, orient
from .models import FitError, RFConfig, encode_dataset, fit_rf, rf_predict
from .optim_so import EPS, Trajectory, expected_improvement, _sample_full
from .space import Configuration, sample_encoded

log = logging.getLogger(__name__)

HV_MC_SAMPLES = 100_000
HV_MC_SEED = 20_210_915

N_MO_PROBES = 10_000
EHVI_DRAWS = 100
PAREGO_AUGMENT = 0.05


# ---------------------------------------------------------------------------
# Nondominated sorting and hypervolume

def _domination_matrix(P: np.ndarray) -> np.ndarray:
    """dom[i, j] is True when point i dominates point j."""
    le = np.all(P[:, None, :] <= P[None, :, :], axis=2)
    lt = np.any(P[:, None, :] < P[None, :, :], axis=2)
    return le & lt


def nondominated_sort(points) -> np.ndarray:
    """Rank per point: 0 for the nondominated set, k for points nondominated
    once ranks below k are removed."""
    P = np.asarray(points, dtype=float)
    if P.ndim != 2:
        raise ValueError("points must be a 2-D array-like")
    n = len(P)
    ranks = np.full(n, -1, dtype=int)
    dom = _domination_matrix(P)
    alive = np.ones(n, dtype=bool)
    r = 0
    while alive.any():
        n_dominators = (dom & alive[:, None]).sum(axis=0)
        front = alive & (n_dominators == 0)
        ranks[front] = r
        alive &= ~front
        r += 1
    return ranks


def nondominated_mask(points) -> np.ndarray:
    """Boolean mask of the rank-0 set, without ranking the rest.

    Points are visited in lexicographic order: a dominator is componentwise
    no larger and differs somewhere, so it strictly precedes its victims
    (a sum-based key would not survive floating point, where a tiny strict
    margin can be absorbed by a large coordinate). Each point then only
    needs checking against the front built so far, linear in n times the
    front size where the full sort is quadratic.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim != 2:
        raise ValueError("points must be a 2-D array-like")
    n = len(P)
    mask = np.zeros(n, dtype=bool)
    K = np.empty_like(P)
    k = 0
    for i in np.lexsort(P.T[::-1]):
        p = P[i]
        view = K[:k]
        dominated = k > 0 and bool(
            np.any(np.all(view <= p, axis=1) & np.any(view < p, axis=1)))
        if not dominated:
            K[k] = p
            k += 1
            mask[i] = True
    return mask


def _nondominated_subset(P: np.ndarray) -> np.ndarray:
    if len(P) == 0:
        return P
    return P[nondominated_mask(P)]


def _hv_2d(F: np.ndarray, ref: np.ndarray) -> float:
    order = np.argsort(F[:, 0], kind="stable")
    F = F[order]
    hv = 0.0
    prev_y = ref[1]
    for x, y in F:
        if y < prev_y:
            hv += (ref[0] - x) * (prev_y - y)
            prev_y = y
    return hv


def _hv_3d(F: np.ndarray, ref: np.ndarray) -> float:
    """Sweep along the third coordinate, integrating 2-D slabs."""
    order = np.argsort(F[:, 2], kind="stable")
    F = F[order]
    zs = F[:, 2]
    hv = 0.0
    for k in range(len(F)):
        z_lo = zs[k]
        z_hi = zs[k + 1] if k + 1 < len(F) else ref[2]
        if z_hi > z_lo:
            slab = _nondominated_subset(F[: k + 1, :2])
            hv += _hv_2d(slab, ref[:2]) * (z_hi - z_lo)
    return hv


def _hv_mc(F: np.ndarray, ref: np.ndarray, n_samples: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    lo = F.min(axis=0)
    box = np.prod(ref - lo)
    if box == 0.0:
        return 0.0
    U = rng.uniform(lo, ref, size=(n_samples, F.shape[1]))
    dominated = np.zeros(n_samples, dtype=bool)
    for p in F:
        dominated |= np.all(U >= p, axis=1)
    return box * dominated.mean()


def hypervolume(front, ref, mc_samples: int = HV_MC_SAMPLES,
                mc_seed: int = HV_MC_SEED) -> float:
    """Lebesgue measure of the region dominated by the front and bounded by
    ref. Exact sweeps for two and three targets; seeded Monte Carlo beyond
    that, so repeated calls agree."""
    F = np.asarray(front, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if F.ndim != 2 or F.shape[1] != len(ref):
        raise ValueError("front and ref dimensions disagree")
    if np.any(F > ref):
        raise ValueError("every front point must weakly dominate ref")
    F = np.unique(_nondominated_subset(F), axis=0)
    if len(F) == 0:
        return 0.0
    m = F.shape[1]
    if m == 2:
        return _hv_2d(F, ref)
    if m == 3:
        return _hv_3d(F, ref)
    return _hv_mc(F, ref, mc_samples, mc_seed)


def hv_contributions(front, ref) -> np.ndarray:
    """Per-point hv(front) - hv(front without the point)."""
    F = np.asarray(front, dtype=float)
    total = hypervolume(F, ref)
    out = np.empty(len(F))
    for i in range(len(F)):
        rest = np.delete(F, i, axis=0)
        out[i] = total - (hypervolume(rest, ref) if len(rest) else 0.0)
    return out


@dataclass
class HVContext:
    """Normalization bounds and reference point for hypervolume readings."""

    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def from_points(cls, Y) -> "HVContext":
        Y = np.asarray(Y, dtype=float)
        mins, maxs = Y.min(axis=0), Y.max(axis=0)
        return cls(mins=mins, maxs=maxs)

    @property
    def ref(self) -> np.ndarray:
        return np.ones(len(self.mins))

    def normalize(self, Y) -> np.ndarray:
        """Map into the unit box, clipping overshoot; clipping preserves the
        dominated region inside the box."""
        Y = np.asarray(Y, dtype=float)
        span = np.where(self.maxs > self.mins, self.maxs - self.mins, 1.0)
        return np.clip((Y - self.mins) / span, 0.0, 1.0)

    def hv(self, Y) -> float:
        return hypervolume(self.normalize(Y), self.ref)


# ---------------------------------------------------------------------------
# Pareto archive

class ParetoArchive:
    """Nondominated set of evaluations, oriented-to-minimize internally."""

    def __init__(self):
        self._configs: list[Configuration] = []
        self._raw: list[tuple[float, ...]] = []
        self._Y: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._configs)

    def insert(self, config: Configuration, raw_values: tuple[float, ...],
               oriented: np.ndarray) -> bool:
        """Add unless dominated; evict members the new point dominates.
        Returns whether the point joined."""
        y = np.asarray(oriented, dtype=float)
        for other in self._Y:
            if np.all(other <= y) and np.any(other < y):
                return False
        keep = [i for i, other in enumerate(self._Y)
                if not (np.all(y <= other) and np.any(y < other))]
        self._configs = [self._configs[i] for i in keep]
        self._raw = [self._raw[i] for i in keep]
        self._Y = [self._Y[i] for i in keep]
        self._configs.append(config)
        self._raw.append(tuple(float(v) for v in raw_values))
        self._Y.append(y)
        return True

    def members(self) -> list[tuple[Configuration, tuple[float, ...]]]:
        return list(zip(self._configs, self._raw))

    def values(self) -> np.ndarray:
        """Oriented objective matrix, (k, m)."""
        return np.array(self._Y) if self._Y else np.empty((0, 0))


# ---------------------------------------------------------------------------
# Shared run scaffolding

def _start_run(instance: Instance, budget: float, seed: int,
               optimizer_id: str) -> tuple[np.random.Generator, Trajectory, ParetoArchive]:
    if instance.m < 2:
        raise ValueError("multi-objective optimizers need at least two targets")
    rng = np.random.default_rng(seed)
    traj = Trajectory(instance.id, optimizer_id, seed, float(budget), instance.directions)
    return rng, traj, ParetoArchive()


def _evaluate(instance: Instance, traj: Trajectory, archive: ParetoArchive,
              config: Configuration) -> None:
    ov = instance.evaluate(config)
    traj.append(config, ov.values, ov.cost)
    archive.insert(config, ov.values, orient(instance, ov.values))


def run_random_mo(instance: Instance, budget: float, seed: int,
                  multiplier: int = 1, optimizer_id: str | None = None
                  ) -> tuple[Trajectory, ParetoArchive]:
    """Uniform full-fidelity sampling; multiplier 4 draws four configurations
    per step, so the run spends multiplier x budget evaluations in total."""
    if multiplier not in (1, 4):
        raise ValueError("multiplier must be 1 or 4")
    oid = optimizer_id or ("rs-mo" if multiplier == 1 else "rs-x4")
    total = float(budget) * multiplier
    rng, traj, archive = _start_run(instance, total, seed, oid)
    traj.notes["multiplier"] = multiplier
    traj.notes["base_budget"] = float(budget)
    while traj.total_cost + multiplier <= total + EPS:
        for c in _sample_full(instance, rng, multiplier):
            _evaluate(instance, traj, archive, c)
    return traj, archive


def _oriented_matrix(instance: Instance, traj: Trajectory) -> np.ndarray:
    return orient(instance, np.array([r.objectives for r in traj.records]))


def _fit_rf_on(instance: Instance, configs, y: np.ndarray, seed: int):
    model = fit_rf(encode_dataset(instance.space, configs, y[:, None]), RFConfig(), seed=seed)
    return lambda X: rf_predict(model, X)


def _full_fidelity_value(instance: Instance) -> float | None:
    bp = instance.space.budget_param
    return None if bp is None else bp.upper


def _init_design(instance: Instance, rng, traj, archive, budget: float) -> bool:
    n_init = 5 * instance.space.dim
    if budget <= n_init:
        raise ValueError(f"budget must exceed the initial design size {n_init}")
    for c in _sample_full(instance, rng, n_init):
        if traj.total_cost + 1.0 > budget + EPS:
            return False
        _evaluate(instance, traj, archive, c)
    return True


def _random_fallback(instance, rng, traj, archive, reason) -> None:
    traj.notes["fallbacks"] = traj.notes.get("fallbacks", 0) + 1
    log.info("iteration %d: %s; random proposal", len(traj.records), reason)
    _evaluate(instance, traj, archive, _sample_full(instance, rng, 1)[0])


def parego_scalarize(Y01: np.ndarray, w: np.ndarray,
                     augment: float = PAREGO_AUGMENT) -> np.ndarray:
    """Augmented Tchebycheff of normalized targets:
    max_i(w_i y_i) + augment * sum_i(w_i y_i)."""
    wy = Y01 * w
    return wy.max(axis=1) + augment * wy.sum(axis=1)


def run_parego(instance: Instance, budget: float, seed: int,
               n_probes: int = N_MO_PROBES) -> tuple[Trajectory, ParetoArchive]:
    """Random simplex weight per iteration, augmented Tchebycheff over
    running-normalized targets, one RF on the scalarization, EI proposal."""
    rng, traj, archive = _start_run(instance, budget, seed, "parego")
    _init_design(instance, rng, traj, archive, budget)
    while traj.total_cost + 1.0 <= budget + EPS:
        Y = _oriented_matrix(instance, traj)
        ctx = HVContext.from_points(Y)
        w = rng.dirichlet(np.ones(instance.m))
        s = parego_scalarize(ctx.normalize(Y), w)
        try:
            predict = _fit_rf_on(instance, [r.config for r in traj.records], s,
                                 seed=int(rng.integers(2 ** 63)))
            X, decode = sample_encoded(instance.space, rng, n_probes,
                                       fidelity=_full_fidelity_value(instance))
            mean, sd = predict(X)
            ei = expected_improvement(mean.ravel(), sd.ravel(), float(s.min()))
            _evaluate(instance, traj, archive, decode(int(np.argmax(ei))))
        except FitError as e:
            _random_fallback(instance, rng, traj, archive, f"surrogate fit failed ({e})")
    return traj, archive


def _per_objective_models(instance, traj, rng):
    Y = _oriented_matrix(instance, traj)
    configs = [r.config for r in traj.records]
    predictors = [_fit_rf_on(instance, configs, Y[:, j], seed=int(rng.integers(2 ** 63)))
                  for j in range(instance.m)]

    def predict_all(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cols = [p(X) for p in predictors]
        mean = np.stack([m.ravel() for m, _ in cols], axis=1)
        sd = np.stack([s.ravel() for _, s in cols], axis=1)
        return mean, sd

    return Y, predict_all


def run_mego(instance: Instance, budget: float, seed: int,
             n_probes: int = N_MO_PROBES) -> tuple[Trajectory, ParetoArchive]:
    """Per-objective RF models; uniform choice among the candidates whose EI
    vectors are nondominated (EI maximized, so negated before sorting)."""
    rng, traj, archive = _start_run(instance, budget, seed, "mego")
    _init_design(instance, rng, traj, archive, budget)
    while traj.total_cost + 1.0 <= budget + EPS:
        try:
            Y, predict_all = _per_objective_models(instance, traj, rng)
            X, decode = sample_encoded(instance.space, rng, n_probes,
                                       fidelity=_full_fidelity_value(instance))
            mean, sd = predict_all(X)
            ei = np.stack([np.asarray(expected_improvement(mean[:, j], sd[:, j],
                                                           float(Y[:, j].min())))
                           for j in range(instance.m)], axis=1)
            front = np.flatnonzero(nondominated_mask(-ei))
            pick = int(front[rng.integers(len(front))])
            _evaluate(instance, traj, archive, decode(pick))
        except FitError as e:
            _random_fallback(instance, rng, traj, archive, f"surrogate fit failed ({e})")
    return traj, archive


def _hv_improvement_2d(F: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Vectorized hv(F + p) - hv(F) inside the unit box with ref (1, 1).

    F is a normalized nondominated front; pts an (n, 2) array already
    clipped to the box.
    """
    if len(F) == 0:
        return (1.0 - pts[:, 0]) * (1.0 - pts[:, 1])
    order = np.argsort(F[:, 0], kind="stable")
    X, Y = F[order, 0], F[order, 1]
    edges = np.append(X, 1.0)
    a, b = pts[:, 0:1], pts[:, 1:2]
    lo = np.maximum(a, edges[:-1][None, :])
    w = np.clip(edges[1:][None, :] - lo, 0.0, None)
    h = np.clip(1.0 - np.maximum(Y[None, :], b), 0.0, None)
    covered = (w * h).sum(axis=1)
    return np.clip((1.0 - pts[:, 0]) * (1.0 - pts[:, 1]) - covered, 0.0, None)


def run_ehvi(instance: Instance, budget: float, seed: int,
             n_probes: int = N_MO_PROBES, n_draws: int = EHVI_DRAWS
             ) -> tuple[Trajectory, ParetoArchive]:
    """Per-objective RF models; candidate scored by the Monte Carlo expected
    hypervolume improvement over independent-normal posterior draws."""
    rng, traj, archive = _start_run(instance, budget, seed, "ehvi")
    _init_design(instance, rng, traj, archive, budget)
    while traj.total_cost + 1.0 <= budget + EPS:
        try:
            Y, predict_all = _per_objective_models(instance, traj, rng)
            ctx = HVContext.from_points(Y)
            F = _nondominated_subset(ctx.normalize(archive.values()))
            X, decode = sample_encoded(instance.space, rng, n_probes,
                                       fidelity=_full_fidelity_value(instance))
            mean, sd = predict_all(X)
            draws = mean[:, None, :] + sd[:, None, :] * rng.standard_normal(
                (len(X), n_draws, instance.m))
            flat = ctx.normalize(draws.reshape(-1, instance.m))
            if instance.m == 2:
                chunks = [_hv_improvement_2d(F, flat[i:i + 100_000])
                          for i in range(0, len(flat), 100_000)]
                imp = np.concatenate(chunks)
            else:
                base = hypervolume(F, ctx.ref) if len(F) else 0.0
                imp = np.array([hypervolume(np.vstack([F, p[None, :]]), ctx.ref) - base
                                for p in flat])
            scores = imp.reshape(len(X), n_draws).mean(axis=1)
            _evaluate(instance, traj, archive, decode(int(np.argmax(scores))))
        except FitError as e:
            _random_fallback(instance, rng, traj, archive, f"surrogate fit failed ({e})")
    return traj, archive


# ---------------------------------------------------------------------------
# MIES

def run_mies(instance: Instance, budget: float, seed: int
             ) -> tuple[Trajectory, ParetoArchive]:
    """Mixed-integer evolution strategy: population floor(budget/6), offspring
    floor(mu/4) per generation, parent tournament by nondomination rank,
    per-gene uniform crossover (p=0.2), Gaussian mutation with sigma 0.1 of
    the encoded range for numeric genes and uniform resampling for
    categorical genes (p=0.2 each), (mu+lambda) survival by rank with
    hypervolume-contribution tie-break.

    Genotypes assign every non-budget parameter; inactive genes ride along
    silently and the phenotype keeps only the active ones.
    """
    if budget < 24:
        raise ValueError("budget must be at least 24 so mu >= 4 and lambda >= 1")
    mu = int(budget) // 6
    lam = mu // 4
    rng, traj, archive = _start_run(instance, budget, seed, "mies")
    traj.notes.update({"mu": mu, "lambda": lam})
    space = instance.space
    genes = [p for p in space.params if not p.budget]

    def random_genotype() -> dict:
        g = {}
        for p in genes:
            if p.kind == "categorical":
                g[p.id] = p.levels[int(rng.integers(len(p.levels)))]
            elif p.kind == "integer":
                g[p.id] = int(rng.integers(int(p.lower), int(p.upper) + 1))
            else:
                g[p.id] = float(rng.uniform(p.lower, p.upper))
        return g

    def phenotype(g: dict) -> Configuration:
        values = {p.id: g[p.id] for p in genes if space.is_active(p.id, g)}
        bp = space.budget_param
        if bp is not None:
            values[bp.id] = bp.upper
        return Configuration(values)

    def mutate(g: dict) -> dict:
        out = dict(g)
        for p in genes:
            if rng.uniform() >= 0.2:
                continue
            if p.kind == "categorical":
                out[p.id] = p.levels[int(rng.integers(len(p.levels)))]
            else:
                span = p.upper - p.lower
                v = float(out[p.id]) + rng.normal(0.0, 0.1) * span
                v = min(max(v, p.lower), p.upper)
                out[p.id] = int(round(v)) if p.kind == "integer" else v
        return out

    def crossover(a: dict, b: dict) -> dict:
        child = dict(a)
        for p in genes:
            if rng.uniform() < 0.2:
                child[p.id] = b[p.id]
        return child

    def evaluate_genotype(g: dict):
        c = phenotype(g)
        ov = instance.evaluate(c)
        traj.append(c, ov.values, ov.cost)
        archive.insert(c, ov.values, orient(instance, ov.values))
        return orient(instance, ov.values)

    population: list[dict] = []
    fitness: list[np.ndarray] = []
    for _ in range(mu):
        if traj.total_cost + 1.0 > budget + EPS:
            return traj, archive
        g = random_genotype()
        population.append(g)
        fitness.append(evaluate_genotype(g))

    def tournament(ranks: np.ndarray) -> int:
        i, j = rng.integers(len(population)), rng.integers(len(population))
        if ranks[i] != ranks[j]:
            return int(i if ranks[i] < ranks[j] else j)
        return int(i if rng.uniform() < 0.5 else j)

    while traj.total_cost + lam <= budget + EPS:
        ranks = nondominated_sort(np.array(fitness))
        offspring = []
        for _ in range(lam):
            a = population[tournament(ranks)]
            b = population[tournament(ranks)]
            offspring.append(mutate(crossover(a, b)))
        off_fit = [evaluate_genotype(g) for g in offspring]

        pool = population + offspring
        pool_fit = fitness + off_fit
        F = np.array(pool_fit)
        pool_ranks = nondominated_sort(F)
        ctx = HVContext.from_points(F)
        F01 = ctx.normalize(F)
        contrib = np.zeros(len(pool))
        for r in np.unique(pool_ranks):
            members = np.flatnonzero(pool_ranks == r)
            contrib[members] = hv_contributions(F01[members], ctx.ref)
        order = sorted(range(len(pool)), key=lambda i: (pool_ranks[i], -contrib[i], i))
        keep = order[:mu]
        population = [pool[i] for i in keep]
        fitness = [pool_fit[i] for i in keep]
    return traj, archive


# ---------------------------------------------------------------------------
# Registry

def _rs_mo(instance, budget, seed):
    return run_random_mo(instance, budget, seed, multiplier=1)


def _rs_x4(instance, budget, seed):
    return run_random_mo(instance, budget, seed, multiplier=4)


MO_OPTIMIZERS: dict[str, "callable"] = {
    "rs-mo": _rs_mo,
    "rs-x4": _rs_x4,
    "parego": run_parego,
    "mego": run_mego,
    "ehvi": run_ehvi,
    "mies": run_mies,
}
