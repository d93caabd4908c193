"""Regression models over encoded configurations.

Three families, all small enough to refit from scratch every optimizer
iteration: a Gaussian process with Matern-3/2 ARD kernel (ML-II fit via
multi-start simplex search), a random forest with across-tree uncertainty,
and an ensemble of small feed-forward networks trained with Adam and early
stopping. Targets can be transformed and min-max scaled; surrogate
predictions are clamped back to the training target range.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .space import Configuration, SearchSpace, encode, encode_matrix, encoding_columns

log = logging.getLogger(__name__)

__all__ = [
    "EncodedDataset", "TargetScaler", "FitError", "DegenerateRanksError",
    "encode", "encode_matrix", "encode_dataset", "stratified_split",
    "GPConfig", "GPModel", "fit_gp", "gp_predict",
    "RFConfig", "RFModel", "fit_rf", "rf_predict",
    "MLPConfig", "MLPEnsemble", "fit_mlp_ensemble", "ensemble_predict",
    "ensemble_predict_dist", "mlp_loss_and_grad", "spearman_rho", "nelder_mead",
]


class FitError(RuntimeError):
    """Model fitting failed (degenerate data, factorization, too few rows)."""


class DegenerateRanksError(ValueError):
    """Rank correlation is undefined: one input has zero rank variance."""


@dataclass
class EncodedDataset:
    """Encoded design matrix plus targets for model fitting."""

    X: np.ndarray                       # (n, p)
    Y: np.ndarray                       # (n, m)
    columns: list = field(default_factory=list)  # (param id, start, width)
    scaler: "TargetScaler | None" = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if len(self.X) != len(self.Y):
            raise ValueError("X and Y row counts differ")
        if not (np.isfinite(self.X).all() and np.isfinite(self.Y).all()):
            raise ValueError("non-finite entries in dataset")

    @property
    def n(self) -> int:
        return len(self.X)


def encode_dataset(space: SearchSpace, configs: list[Configuration], Y) -> EncodedDataset:
    return EncodedDataset(encode_matrix(space, configs), np.asarray(Y, dtype=float),
                          columns=encoding_columns(space))


# ---------------------------------------------------------------------------
# Target scaling

_TRANSFORMS = ("identity", "log", "negexp")


@dataclass
class TargetScaler:
    """Per-target monotone transform followed by min-max scaling to [0, 1].

    Transforms: identity; log (targets must be positive); negexp,
    y -> -exp(-y). With clamp=True, unscale clips into [0, 1] first, so
    round trips through a model can never leave the training target range.
    """

    transform: str = "identity"
    clamp: bool = True
    mins_: np.ndarray | None = None
    maxs_: np.ndarray | None = None

    def _t(self, Y: np.ndarray) -> np.ndarray:
        if self.transform == "identity":
            return Y
        if self.transform == "log":
            if np.any(Y <= 0):
                raise ValueError("log transform needs positive targets")
            return np.log(Y)
        if self.transform == "negexp":
            return -np.exp(-Y)
        raise ValueError(f"unknown transform {self.transform!r}")

    def _t_inv(self, T: np.ndarray) -> np.ndarray:
        if self.transform == "identity":
            return T
        if self.transform == "log":
            return np.exp(T)
        return -np.log(-T)

    def fit(self, Y: np.ndarray) -> "TargetScaler":
        T = self._t(np.atleast_2d(np.asarray(Y, dtype=float)))
        self.mins_ = T.min(axis=0)
        self.maxs_ = T.max(axis=0)
        return self

    @property
    def degenerate(self) -> np.ndarray:
        return (self.maxs_ - self.mins_) <= 0.0

    def scale(self, Y: np.ndarray) -> np.ndarray:
        T = self._t(np.asarray(Y, dtype=float))
        span = np.where(self.degenerate, 1.0, self.maxs_ - self.mins_)
        return (T - self.mins_) / span

    def unscale(self, S: np.ndarray) -> np.ndarray:
        S = np.asarray(S, dtype=float)
        if self.clamp:
            S = np.clip(S, 0.0, 1.0)
        span = np.where(self.degenerate, 1.0, self.maxs_ - self.mins_)
        return self._t_inv(self.mins_ + S * span)


def stratified_split(y: np.ndarray, fractions: tuple[float, ...],
                     rng: np.random.Generator, bins: int = 10) -> list[np.ndarray]:
    """Index partition with the target's quantile bins represented in every
    part according to `fractions` (which must sum to 1)."""
    y = np.asarray(y, dtype=float).ravel()
    n = len(y)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    edges = np.quantile(y, np.linspace(0, 1, bins + 1)[1:-1])
    which = np.searchsorted(edges, y, side="right")
    parts: list[list[int]] = [[] for _ in fractions]
    for b in range(bins):
        idx = np.flatnonzero(which == b)
        rng.shuffle(idx)
        cuts = np.floor(np.cumsum(np.array(fractions) * len(idx))).astype(int)
        prev = 0
        for pi, cut in enumerate(cuts):
            parts[pi].extend(idx[prev:cut])
            prev = cut
    out = [np.sort(np.array(p, dtype=int)) for p in parts]
    assert sum(len(p) for p in out) == n
    return out


# ---------------------------------------------------------------------------
# Rank correlation

def _fractional_ranks(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    _, inv, counts = np.unique(v, return_inverse=True, return_counts=True)
    cum = np.cumsum(counts)
    avg = cum - (counts - 1) / 2.0
    return avg[inv]


def spearman_rho(a, b) -> float:
    """Pearson correlation of fractional ranks (ties get average ranks).

    Raises DegenerateRanksError when either input has zero rank variance.
    """
    ra, rb = _fractional_ranks(a), _fractional_ranks(b)
    if len(ra) != len(rb):
        raise ValueError("inputs differ in length")
    if len(ra) < 2:
        raise DegenerateRanksError("need at least two observations")
    da, db = ra - ra.mean(), rb - rb.mean()
    denom2 = float(da @ da) * float(db @ db)
    if denom2 == 0.0:
        raise DegenerateRanksError("zero rank variance")
    return float(np.clip(float(da @ db) / math.sqrt(denom2), -1.0, 1.0))


# ---------------------------------------------------------------------------
# Nelder-Mead simplex minimizer

def nelder_mead(f, x0: np.ndarray, step: float = 0.25, max_iter: int = 200,
                rel_tol: float = 1e-4):
    """Minimize f from x0; stops once an iteration improves the running best
    by less than rel_tol in relative terms (or not at all), or at max_iter.

    Returns (best x, best f, evaluation count).
    """
    x0 = np.asarray(x0, dtype=float)
    d = len(x0)
    simplex = [x0]
    for i in range(d):
        e = x0.copy()
        e[i] += step if step else 0.1
        simplex.append(e)
    fs = [f(x) for x in simplex]
    n_eval = d + 1
    best_prev = min(fs)

    for _ in range(max_iter):
        order = np.argsort(fs)
        simplex = [simplex[i] for i in order]
        fs = [fs[i] for i in order]
        centroid = np.mean(simplex[:-1], axis=0)

        xr = centroid + (centroid - simplex[-1])
        fr = f(xr); n_eval += 1
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - simplex[-1])
            fe = f(xe); n_eval += 1
            simplex[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
        else:
            xc = centroid + 0.5 * (simplex[-1] - centroid)
            fc = f(xc); n_eval += 1
            if fc < fs[-1]:
                simplex[-1], fs[-1] = xc, fc
            else:
                for i in range(1, d + 1):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    fs[i] = f(simplex[i])
                n_eval += d

        best = min(fs)
        improvement = best_prev - best
        if improvement <= rel_tol * max(abs(best_prev), 1e-12):
            best_prev = best
            break
        best_prev = best

    i = int(np.argmin(fs))
    return simplex[i], fs[i], n_eval


# ---------------------------------------------------------------------------
# Gaussian process, Matern-3/2 ARD

_SQRT3 = math.sqrt(3.0)


@dataclass
class GPConfig:
    n_starts: int = 2
    nm_max_iter: int = 50
    nm_step: float = 0.8
    jitter: float = 1e-8
    jitter_max: float = 1e-2
    lengthscale_bounds: tuple[float, float] = (-5.0, 5.0)  # log lengthscale
    signal_bounds: tuple[float, float] = (-5.0, 5.0)       # log signal sd
    noise_bounds: tuple[float, float] = (-8.0, 1.0)        # log noise sd


@dataclass
class GPModel:
    X: np.ndarray
    y_mean: float
    y_std: float
    log_ls: np.ndarray
    log_sf: float
    log_sn: float
    L: np.ndarray
    alpha: np.ndarray
    lml: float


def _matern32(A: np.ndarray, B: np.ndarray, log_ls: np.ndarray, log_sf: float) -> np.ndarray:
    ls = np.exp(log_ls)
    a, b = A / ls, B / ls
    d2 = np.maximum(
        (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T), 0.0)
    r = np.sqrt(d2) * _SQRT3
    return np.exp(2.0 * log_sf) * (1.0 + r) * np.exp(-r)


def _chol_with_jitter(K: np.ndarray, cfg: GPConfig) -> np.ndarray:
    jitter = 0.0
    while True:
        try:
            return np.linalg.cholesky(K + jitter * np.eye(len(K)))
        except np.linalg.LinAlgError:
            jitter = cfg.jitter if jitter == 0.0 else jitter * 10.0
            if jitter > cfg.jitter_max:
                raise FitError("covariance not positive definite at maximum jitter")


def _gp_lml(X: np.ndarray, y: np.ndarray, theta: np.ndarray, cfg: GPConfig):
    p = X.shape[1]
    log_ls, log_sf, log_sn = theta[:p], theta[p], theta[p + 1]
    K = _matern32(X, X, log_ls, log_sf) + math.exp(2.0 * log_sn) * np.eye(len(X))
    L = _chol_with_jitter(K, cfg)
    v = solve_triangular(L, y, lower=True, check_finite=False)
    alpha = solve_triangular(L.T, v, lower=False, check_finite=False)
    lml = -0.5 * float(y @ alpha) - float(np.log(np.diag(L)).sum()) - 0.5 * len(y) * math.log(2 * math.pi)
    return lml, L, alpha


def _clip_theta(theta: np.ndarray, p: int, cfg: GPConfig) -> np.ndarray:
    t = theta.copy()
    t[:p] = np.clip(t[:p], *cfg.lengthscale_bounds)
    t[p] = np.clip(t[p], *cfg.signal_bounds)
    t[p + 1] = np.clip(t[p + 1], *cfg.noise_bounds)
    return t


def fit_gp(data: EncodedDataset, cfg: GPConfig | None = None, seed: int = 0) -> GPModel:
    """ML-II hyperparameters by simplex search from several starts.

    The returned model's log marginal likelihood is at least that of every
    start point (the search never discards its best evaluation).
    """
    cfg = cfg or GPConfig()
    if data.Y.shape[1] != 1:
        raise FitError("GP fits a single target")
    X = data.X
    y = data.Y[:, 0]
    n, p = X.shape
    if n < 2:
        raise FitError("GP needs at least two rows")
    y_mean, y_std = float(y.mean()), float(y.std())
    if y_std == 0.0:
        y_std = 1.0
    ys = (y - y_mean) / y_std

    # median-heuristic start for the lengthscales
    sub = X if n <= 128 else X[np.random.default_rng(seed).choice(n, 128, replace=False)]
    med = []
    for j in range(p):
        d = np.abs(sub[:, j, None] - sub[None, :, j])
        d = d[d > 0]
        med.append(math.log(float(np.median(d))) if len(d) else 0.0)
    start0 = np.array(med + [0.0, math.log(1e-3)])

    rng = np.random.default_rng(seed)
    starts = [start0]
    lo = np.array([cfg.lengthscale_bounds[0]] * p + [cfg.signal_bounds[0], cfg.noise_bounds[0]])
    hi = np.array([cfg.lengthscale_bounds[1]] * p + [cfg.signal_bounds[1], cfg.noise_bounds[1]])
    for _ in range(cfg.n_starts - 1):
        starts.append(rng.uniform(lo, hi))

    best = None  # (lml, theta, L, alpha)

    def objective(theta: np.ndarray) -> float:
        nonlocal best
        theta = _clip_theta(theta, p, cfg)
        try:
            lml, L, alpha = _gp_lml(X, ys, theta, cfg)
        except FitError:
            return 1e12
        if best is None or lml > best[0]:
            best = (lml, theta, L, alpha)
        return -lml

    for s in starts:
        nelder_mead(objective, _clip_theta(s, p, cfg), step=cfg.nm_step,
                    max_iter=cfg.nm_max_iter)
    if best is None:
        raise FitError("no usable GP hyperparameters found")
    lml, theta, L, alpha = best
    return GPModel(X=X, y_mean=y_mean, y_std=y_std, log_ls=theta[:p],
                   log_sf=float(theta[p]), log_sn=float(theta[p + 1]),
                   L=L, alpha=alpha, lml=lml)


def gp_predict(model: GPModel, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and (latent) sd at query rows."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    Ks = _matern32(model.X, Xq, model.log_ls, model.log_sf)  # (n, q)
    mean = model.y_mean + model.y_std * (Ks.T @ model.alpha)
    V = solve_triangular(model.L, Ks, lower=True, check_finite=False)  # (n, q)
    var = np.exp(2.0 * model.log_sf) - (V * V).sum(axis=0)
    sd = model.y_std * np.sqrt(np.maximum(var, 0.0))
    return mean, sd


# ---------------------------------------------------------------------------
# Random forest regression

@dataclass
class RFConfig:
    n_trees: int = 10
    min_samples_split: int = 2
    max_depth: int | None = None
    max_features: float | None = None   # per-node feature fraction; None = all
    bootstrap: bool = True


@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray


@dataclass
class RFModel:
    trees: list
    bootstrap_indices: list
    n_features: int


def _build_tree(X: np.ndarray, y: np.ndarray, cfg: RFConfig, rng: np.random.Generator) -> _Tree:
    n, p = X.shape
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    stack = [(new_node(), np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        value[node] = float(yn.mean())
        if (len(idx) < cfg.min_samples_split
                or (cfg.max_depth is not None and depth >= cfg.max_depth)
                or np.all(yn == yn[0])):
            continue
        if cfg.max_features is not None:
            k = max(1, int(math.ceil(cfg.max_features * p)))
            feats = np.sort(rng.choice(p, size=k, replace=False))
        else:
            feats = np.arange(p)
        Xn = X[np.ix_(idx, feats)]
        order = np.argsort(Xn, axis=0, kind="stable")
        Xs = np.take_along_axis(Xn, order, axis=0)
        Ys = yn[order]
        csum = np.cumsum(Ys, axis=0)
        total = csum[-1]
        s = len(idx)
        kcounts = np.arange(1, s, dtype=float)[:, None]
        sl = csum[:-1]
        gain = sl ** 2 / kcounts + (total - sl) ** 2 / (s - kcounts)
        valid = Xs[:-1] < Xs[1:]
        if not valid.any():
            continue
        gain = np.where(valid, gain, -np.inf)
        flat = int(np.argmax(gain))
        cut, fj = divmod(flat, gain.shape[1])
        f = int(feats[fj])
        thr = 0.5 * (Xs[cut, fj] + Xs[cut + 1, fj])
        mask = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = float(thr)
        li, ri = new_node(), new_node()
        left[node], right[node] = li, ri
        stack.append((li, idx[mask], depth + 1))
        stack.append((ri, idx[~mask], depth + 1))

    return _Tree(np.array(feature, dtype=np.int32), np.array(threshold),
                 np.array(left, dtype=np.int32), np.array(right, dtype=np.int32),
                 np.array(value))


def fit_rf(data: EncodedDataset, cfg: RFConfig | None = None, seed: int = 0) -> RFModel:
    cfg = cfg or RFConfig()
    if data.Y.shape[1] != 1:
        raise FitError("RF fits a single target")
    X, y = data.X, data.Y[:, 0]
    n = len(X)
    if n < 2:
        raise FitError("RF needs at least two rows")
    rng = np.random.default_rng(seed)
    trees, boots = [], []
    for _ in range(cfg.n_trees):
        idx = rng.integers(n, size=n) if cfg.bootstrap else np.arange(n)
        boots.append(idx)
        trees.append(_build_tree(X[idx], y[idx], cfg, rng))
    return RFModel(trees=trees, bootstrap_indices=boots, n_features=X.shape[1])


def _tree_predict(tree: _Tree, X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X))
    stack = [(0, np.arange(len(X)))]
    while stack:
        node, ii = stack.pop()
        f = tree.feature[node]
        if f < 0:
            out[ii] = tree.value[node]
            continue
        mask = X[ii, f] <= tree.threshold[node]
        stack.append((tree.left[node], ii[mask]))
        stack.append((tree.right[node], ii[~mask]))
    return out


def rf_predict(model: RFModel, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and across-tree standard deviation (population sd)."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    preds = np.stack([_tree_predict(t, Xq) for t in model.trees])
    return preds.mean(axis=0), preds.std(axis=0)


# ---------------------------------------------------------------------------
# MLP ensemble

@dataclass
class MLPConfig:
    hidden: tuple[int, int] = (64, 64)
    members: int = 5
    lr: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.2
    transform: str = "identity"
    clamp: bool = True


@dataclass
class MLPEnsemble:
    members: list
    weights: np.ndarray          # Dirichlet(1) mixture weights, fixed at fit
    scaler: TargetScaler
    n_targets: int
    cfg: MLPConfig


def _init_params(p: int, m: int, hidden: tuple[int, int], rng: np.random.Generator) -> list[np.ndarray]:
    sizes = [p, hidden[0], hidden[1], m]
    params = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (a + b))
        params.append(rng.uniform(-bound, bound, size=(a, b)))
        params.append(np.zeros(b))
    return params


def _mlp_forward(params: list[np.ndarray], X: np.ndarray) -> np.ndarray:
    W1, b1, W2, b2, W3, b3 = params
    a1 = np.tanh(X @ W1 + b1)
    a2 = np.tanh(a1 @ W2 + b2)
    return a2 @ W3 + b3


def mlp_loss_and_grad(params: list[np.ndarray], X: np.ndarray, Y: np.ndarray):
    """Half mean squared error over all outputs and its analytic gradient."""
    W1, b1, W2, b2, W3, b3 = params
    a1 = np.tanh(X @ W1 + b1)
    a2 = np.tanh(a1 @ W2 + b2)
    out = a2 @ W3 + b3
    diff = out - Y
    n_items = diff.size
    loss = 0.5 * float((diff * diff).sum()) / n_items

    d_out = diff / n_items
    gW3 = a2.T @ d_out
    gb3 = d_out.sum(axis=0)
    d_a2 = (d_out @ W3.T) * (1.0 - a2 * a2)
    gW2 = a1.T @ d_a2
    gb2 = d_a2.sum(axis=0)
    d_a1 = (d_a2 @ W2.T) * (1.0 - a1 * a1)
    gW1 = X.T @ d_a1
    gb1 = d_a1.sum(axis=0)
    return loss, [gW1, gb1, gW2, gb2, gW3, gb3]


def _train_member(X: np.ndarray, Ys: np.ndarray, Xv: np.ndarray, Yv: np.ndarray,
                  cfg: MLPConfig, rng: np.random.Generator) -> list[np.ndarray]:
    params = _init_params(X.shape[1], Ys.shape[1], cfg.hidden, rng)
    mom = [np.zeros_like(w) for w in params]
    vel = [np.zeros_like(w) for w in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    t = 0
    best_loss, best_params, bad = math.inf, [w.copy() for w in params], 0
    n = len(X)
    for _ in range(cfg.max_epochs):
        perm = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            bi = perm[s:s + cfg.batch_size]
            _, grads = mlp_loss_and_grad(params, X[bi], Ys[bi])
            t += 1
            corr = math.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
            for k in range(len(params)):
                mom[k] = b1 * mom[k] + (1 - b1) * grads[k]
                vel[k] = b2 * vel[k] + (1 - b2) * grads[k] ** 2
                params[k] -= cfg.lr * corr * mom[k] / (np.sqrt(vel[k]) + eps)
        vd = _mlp_forward(params, Xv) - Yv
        val = float((vd * vd).mean())
        if val < best_loss - 1e-12:
            best_loss, bad = val, 0
            best_params = [w.copy() for w in params]
        else:
            bad += 1
            if bad > cfg.patience:
                break
    return best_params


def fit_mlp_ensemble(data: EncodedDataset, cfg: MLPConfig | None = None,
                     seed: int = 0) -> MLPEnsemble:
    """Train the ensemble: shared scaler and validation split, per-member
    initialization and shuffling, Dirichlet(1) mixture weights fixed here."""
    cfg = cfg or MLPConfig()
    if data.n < 50:
        raise FitError("MLP ensemble needs at least 50 samples")
    scaler = TargetScaler(transform=cfg.transform, clamp=cfg.clamp).fit(data.Y)
    Ys = scaler.scale(data.Y)
    rng = np.random.default_rng(seed)
    idx_fit, idx_val = stratified_split(Ys[:, 0], (1.0 - cfg.val_fraction, cfg.val_fraction), rng)
    Xf, Yf = data.X[idx_fit], Ys[idx_fit]
    Xv, Yv = data.X[idx_val], Ys[idx_val]
    members = []
    for _ in range(cfg.members):
        member_rng = np.random.default_rng(rng.integers(2 ** 63))
        members.append(_train_member(Xf, Yf, Xv, Yv, cfg, member_rng))
    weights = rng.dirichlet(np.ones(cfg.members))
    return MLPEnsemble(members=members, weights=weights, scaler=scaler,
                       n_targets=data.Y.shape[1], cfg=cfg)


def ensemble_predict(model: MLPEnsemble, Xq: np.ndarray, mode: str = "mean") -> np.ndarray:
    """Predict targets on the original scale; mode 'mean' averages members
    uniformly, 'dirichlet' uses the stored mixture weights."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    preds = np.stack([_mlp_forward(p, Xq) for p in model.members])
    if mode == "mean":
        mixed = preds.mean(axis=0)
    elif mode == "dirichlet":
        mixed = np.einsum("k,knm->nm", model.weights, preds)
    else:
        raise ValueError(f"unknown prediction mode {mode!r}")
    return model.scaler.unscale(mixed)


def ensemble_predict_dist(model: MLPEnsemble, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and spread on the original scale: the member
    predictions mixed by the stored weights, and the square root of the
    weighted second central moment across members."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    preds = np.stack([model.scaler.unscale(_mlp_forward(p, Xq)) for p in model.members])
    mean = np.einsum("k,knm->nm", model.weights, preds)
    var = np.einsum("k,knm->nm", model.weights, (preds - mean) ** 2)
    return mean, np.sqrt(var)
