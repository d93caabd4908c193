"""Multi-fidelity synthetic test functions, all oriented to minimize.

Each function is a pair (high fidelity, low fidelity) blended linearly in a
fidelity z in [2^-9, 1]:

    f(x, z) = z * f_hi(x) + (1 - z) * f_lo(x)

so f(x, 1) is the textbook function exactly and the bias term
(1 - z) * (f_lo(x) - f_hi(x)) shrinks monotonically as z -> 1. Evaluation
cost is z full-fidelity-equivalents. The borehole response is negated so
that minimization applies across the board.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .space import Configuration, ParamDef, SearchSpace

Z_MIN = 2.0 ** -9
Z_MAX = 1.0


@dataclass(frozen=True)
class KnownOptimum:
    value: float
    argmins: tuple[tuple[float, ...], ...]


@dataclass(frozen=True)
class SyntheticFunction:
    name: str
    dim: int
    bounds: tuple[tuple[float, float], ...]
    hi: Callable[[np.ndarray], np.ndarray]
    lo: Callable[[np.ndarray], np.ndarray]
    optimum: KnownOptimum


# ---------------------------------------------------------------------------
# Branin (2-D). Low fidelity shifts the b, c, t coefficients.

_B_A = 1.0
_B_B = 5.1 / (4.0 * math.pi ** 2)
_B_C = 5.0 / math.pi
_B_R = 6.0
_B_S = 10.0
_B_T = 1.0 / (8.0 * math.pi)


def _branin(X: np.ndarray, b: float, c: float, t: float) -> np.ndarray:
    x1, x2 = X[:, 0], X[:, 1]
    return (_B_A * (x2 - b * x1 ** 2 + c * x1 - _B_R) ** 2
            + _B_S * (1.0 - t) * np.cos(x1) + _B_S)


def branin_hi(X: np.ndarray) -> np.ndarray:
    return _branin(X, _B_B, _B_C, _B_T)


def branin_lo(X: np.ndarray) -> np.ndarray:
    return _branin(X, _B_B - 0.01, _B_C - 0.1, _B_T + 0.05)


# ---------------------------------------------------------------------------
# Currin exponential (2-D). Low fidelity is the four-point smoothed average.

def currin_hi(X: np.ndarray) -> np.ndarray:
    x1, x2 = X[:, 0], X[:, 1]
    with np.errstate(divide="ignore"):
        factor = np.where(x2 > 0.0, 1.0 - np.exp(-1.0 / (2.0 * np.maximum(x2, 1e-300))), 1.0)
    num = 2300.0 * x1 ** 3 + 1900.0 * x1 ** 2 + 2092.0 * x1 + 60.0
    den = 100.0 * x1 ** 3 + 500.0 * x1 ** 2 + 4.0 * x1 + 20.0
    return factor * num / den


def currin_lo(X: np.ndarray) -> np.ndarray:
    x1, x2 = X[:, 0], X[:, 1]
    up = np.stack([x1, x2 + 0.05], axis=1)
    dn = np.stack([x1, np.maximum(x2 - 0.05, 0.0)], axis=1)
    total = np.zeros(len(X))
    for dx in (0.05, -0.05):
        shift = np.array([dx, 0.0])
        total += currin_hi(up + shift) + currin_hi(dn + shift)
    return 0.25 * total


# ---------------------------------------------------------------------------
# Hartmann 3-D / 6-D. Low fidelity offsets the alpha coefficients by delta;
# the linear blend in z is then identical to alpha + (1-z)*delta.

_H_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_H_DELTA = np.array([0.01, -0.01, -0.1, 0.1])

_H3_A = np.array([[3.0, 10.0, 30.0],
                  [0.1, 10.0, 35.0],
                  [3.0, 10.0, 30.0],
                  [0.1, 10.0, 35.0]])
_H3_P = 1e-4 * np.array([[3689.0, 1170.0, 2673.0],
                         [4699.0, 4387.0, 7470.0],
                         [1091.0, 8732.0, 5547.0],
                         [381.0, 5743.0, 8828.0]])

_H6_A = np.array([[10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
                  [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
                  [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
                  [17.0, 8.0, 0.05, 10.0, 0.1, 14.0]])
_H6_P = 1e-4 * np.array([[1312.0, 1696.0, 5569.0, 124.0, 8283.0, 5886.0],
                         [2329.0, 4135.0, 8307.0, 3736.0, 1004.0, 9991.0],
                         [2348.0, 1451.0, 3522.0, 2883.0, 3047.0, 6650.0],
                         [4047.0, 8828.0, 8732.0, 5743.0, 1091.0, 381.0]])


def _hartmann(X: np.ndarray, A: np.ndarray, P: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    # inner[i, n] = sum_j A[i, j] * (X[n, j] - P[i, j])^2
    diff = X[:, None, :] - P[None, :, :]
    inner = np.einsum("ij,nij->ni", A, diff ** 2)
    return -(np.exp(-inner) @ alpha)


def hartmann3_hi(X: np.ndarray) -> np.ndarray:
    return _hartmann(X, _H3_A, _H3_P, _H_ALPHA)


def hartmann3_lo(X: np.ndarray) -> np.ndarray:
    return _hartmann(X, _H3_A, _H3_P, _H_ALPHA + _H_DELTA)


def hartmann6_hi(X: np.ndarray) -> np.ndarray:
    return _hartmann(X, _H6_A, _H6_P, _H_ALPHA)


def hartmann6_lo(X: np.ndarray) -> np.ndarray:
    return _hartmann(X, _H6_A, _H6_P, _H_ALPHA + _H_DELTA)


# ---------------------------------------------------------------------------
# Borehole (8-D), negated so smaller is better. Inputs:
# rw, r, Tu, Hu, Tl, Hl, L, Kw.

def _borehole_parts(X: np.ndarray):
    rw, r, Tu, Hu, Tl, Hl, L, Kw = (X[:, i] for i in range(8))
    lnr = np.log(r / rw)
    frac = 2.0 * L * Tu / (lnr * rw ** 2 * Kw)
    return Tu, Hu - Hl, lnr, frac, Tu / Tl


def borehole_hi(X: np.ndarray) -> np.ndarray:
    Tu, dH, lnr, frac, ratio = _borehole_parts(X)
    return -(2.0 * math.pi * Tu * dH) / (lnr * (1.0 + frac + ratio))


def borehole_lo(X: np.ndarray) -> np.ndarray:
    Tu, dH, lnr, frac, ratio = _borehole_parts(X)
    return -(5.0 * Tu * dH) / (lnr * (1.5 + frac + ratio))


# ---------------------------------------------------------------------------
# Registry. Optimum values and argmins were frozen from an independent
# oracle pass: analytic stationary points refined by simplex descent for the
# interior optima, a monotonicity argument for the borehole corner, and
# large seeded random searches as cross-checks.

_UNIT = (0.0, 1.0)

FUNCTIONS: dict[str, SyntheticFunction] = {}


def _register(fn: SyntheticFunction) -> SyntheticFunction:
    FUNCTIONS[fn.name] = fn
    return fn


BRANIN2 = _register(SyntheticFunction(
    name="branin2",
    dim=2,
    bounds=((-5.0, 10.0), (0.0, 15.0)),
    hi=branin_hi,
    lo=branin_lo,
    optimum=KnownOptimum(
        value=0.39788735772973816,
        argmins=((-math.pi, 12.275), (math.pi, 2.275), (9.42477796076938, 2.475)),
    ),
))

CURRIN2 = _register(SyntheticFunction(
    name="currin2",
    dim=2,
    bounds=(_UNIT, _UNIT),
    hi=currin_hi,
    lo=currin_lo,
    optimum=KnownOptimum(
        value=1.1804080208620997,  # = 3 * (1 - exp(-1/2)) at the corner
        argmins=((0.0, 1.0),),
    ),
))

HARTMANN3 = _register(SyntheticFunction(
    name="hartmann3",
    dim=3,
    bounds=(_UNIT, _UNIT, _UNIT),
    hi=hartmann3_hi,
    lo=hartmann3_lo,
    optimum=KnownOptimum(
        value=-3.862779787332663,
        argmins=((0.11458887133078371, 0.5556488955562107, 0.852546983879289),),
    ),
))

HARTMANN6 = _register(SyntheticFunction(
    name="hartmann6",
    dim=6,
    bounds=(_UNIT,) * 6,
    hi=hartmann6_hi,
    lo=hartmann6_lo,
    optimum=KnownOptimum(
        value=-3.3223680114155147,
        argmins=((0.2016895106414348, 0.15001069461424155, 0.4768739765861194,
                  0.2753324285232711, 0.31165161724300744, 0.6573005330010271),),
    ),
))

BOREHOLE8 = _register(SyntheticFunction(
    name="borehole8",
    dim=8,
    bounds=((0.05, 0.15), (100.0, 50000.0), (63070.0, 115600.0), (990.0, 1110.0),
            (63.1, 116.0), (700.0, 820.0), (1120.0, 1680.0), (9855.0, 12045.0)),
    hi=borehole_hi,
    lo=borehole_lo,
    optimum=KnownOptimum(
        value=-309.5755876604079,
        argmins=((0.15, 100.0, 115600.0, 1110.0, 116.0, 700.0, 1120.0, 12045.0),),
    ),
))


def known_optimum(name: str) -> KnownOptimum:
    return FUNCTIONS[name].optimum


def _check_domain(fn: SyntheticFunction, X: np.ndarray, Z: np.ndarray) -> None:
    if X.shape[1] != fn.dim:
        raise ValueError(f"{fn.name} expects {fn.dim} coordinates, got {X.shape[1]}")
    lo = np.array([b[0] for b in fn.bounds])
    hi = np.array([b[1] for b in fn.bounds])
    if np.any(X < lo) or np.any(X > hi):
        raise ValueError(f"{fn.name}: input outside the domain box")
    if np.any(Z < Z_MIN) or np.any(Z > Z_MAX):
        raise ValueError(f"fidelity outside [{Z_MIN}, {Z_MAX}]")


def eval_batch(fn: SyntheticFunction, X: np.ndarray, Z) -> np.ndarray:
    """Vectorized f(x, z) over rows of X; Z is a scalar or per-row array."""
    X = np.asarray(X, dtype=float)
    Z = np.broadcast_to(np.asarray(Z, dtype=float), (len(X),))
    _check_domain(fn, X, Z)
    return Z * fn.hi(X) + (1.0 - Z) * fn.lo(X)


def eval_synthetic(fn: SyntheticFunction | str, x, z: float = 1.0) -> float:
    """Single evaluation; `fn` may be a registry name."""
    if isinstance(fn, str):
        fn = FUNCTIONS[fn]
    return float(eval_batch(fn, np.asarray(x, dtype=float)[None, :], z)[0])


def space_for(fn: SyntheticFunction) -> SearchSpace:
    """The function's box as a search space: x1..xD plus budget z."""
    params = [ParamDef(f"x{i + 1}", "continuous", lo, hi)
              for i, (lo, hi) in enumerate(fn.bounds)]
    params.append(ParamDef("z", "continuous", Z_MIN, Z_MAX, budget=True))
    return SearchSpace(name=fn.name, params=tuple(params))


def config_to_x(fn: SyntheticFunction, config: Configuration) -> np.ndarray:
    return np.array([config[f"x{i + 1}"] for i in range(fn.dim)], dtype=float)
