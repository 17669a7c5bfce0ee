"""Multi-start bounded quasi-Newton ascent for acquisition surfaces.

All starts are advanced together so one batched evaluation of the
acquisition serves every start, including the finite-difference stencils.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dpmm import RegimeState

FD_STEP = 1e-5
N_PERTURB = 5
PERTURB_STD = 0.05
# Candidates closer than this (max-norm, model coordinates) to an observed
# input count as repeats.
MIN_SEPARATION = 1e-6

Field = Callable[[np.ndarray], np.ndarray]


@dataclass
class AscentResult:
    x: np.ndarray
    value: float
    start_index: int
    starts: np.ndarray
    start_values: np.ndarray
    fallback: bool = False


def _as_bounds(bounds) -> tuple[np.ndarray, np.ndarray]:
    b = np.atleast_2d(np.asarray(bounds, dtype=float))
    return b[:, 0].copy(), b[:, 1].copy()


def _evaluate(f: Field, X: np.ndarray) -> np.ndarray:
    v = np.asarray(f(X), dtype=float).reshape(-1)
    return np.where(np.isfinite(v), v, -np.inf)


def _fd_grad(f: Field, X: np.ndarray) -> np.ndarray:
    m, d = X.shape
    E = np.eye(d) * FD_STEP
    stencil = np.concatenate([X[:, None, :] + E[None], X[:, None, :] - E[None]], axis=1)
    v = _evaluate(f, stencil.reshape(-1, d)).reshape(m, 2 * d)
    with np.errstate(invalid="ignore"):
        g = (v[:, :d] - v[:, d:]) / (2 * FD_STEP)
    return np.where(np.isfinite(g), g, 0.0)


def projected_quasi_newton(
    f: Field,
    X0: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    grad: Callable[[np.ndarray], np.ndarray] | None = None,
    max_iter: int = 100,
    gtol: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray]:
    """Maximize ``f`` from every row of ``X0`` inside [lo, hi].

    BFGS inverse-Hessian on the free coordinates, a projected backtracking
    line search, and curvature pairs taken from the projected iterates.
    A start only moves when its value strictly improves.
    """
    grad = grad or (lambda Z: _fd_grad(f, Z))
    X = np.clip(np.array(X0, dtype=float), lo, hi)
    m, d = X.shape
    fx = _evaluate(f, X)
    G = grad(X)
    H = np.tile(np.eye(d), (m, 1, 1))
    active = np.isfinite(fx)
    span = hi - lo
    for _ in range(max_iter):
        free = ~(((X <= lo) & (G < 0)) | ((X >= hi) & (G > 0)))
        PG = np.where(free, G, 0.0)
        active &= np.linalg.norm(PG, axis=1) >= gtol
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Fm = free[idx]
        Hf = H[idx] * Fm[:, :, None] * Fm[:, None, :]
        P = np.einsum("mij,mj->mi", Hf, PG[idx])
        bad = np.einsum("mi,mi->m", P, PG[idx]) <= 0
        P[bad] = PG[idx][bad]
        H[idx[bad]] = np.eye(d)
        # keep the first trial step inside one box width
        scale = np.max(np.abs(P) / span, axis=1)
        P = P / np.maximum(scale, 1.0)[:, None]
        t = np.ones(idx.size)
        pending = np.ones(idx.size, dtype=bool)
        Xn = X[idx].copy()
        fn = fx[idx].copy()
        for _ls in range(40):
            j = np.flatnonzero(pending)
            if j.size == 0:
                break
            trial = np.clip(X[idx[j]] + t[j, None] * P[j], lo, hi)
            ft = _evaluate(f, trial)
            gain = np.einsum("mi,mi->m", PG[idx[j]], trial - X[idx[j]])
            ok = ft > fx[idx[j]] + 1e-4 * np.maximum(gain, 0.0)
            ok &= ft > fx[idx[j]]
            acc = j[ok]
            Xn[acc] = trial[ok]
            fn[acc] = ft[ok]
            pending[acc] = False
            t[j[~ok]] *= 0.5
        moved = ~pending
        active[idx[~moved]] = False
        mi = idx[moved]
        if mi.size == 0:
            break
        S = Xn[moved] - X[mi]
        Gn = grad(Xn[moved])
        Y = G[mi] - Gn  # gradient change of the minimized objective -f
        X[mi], fx[mi] = Xn[moved], fn[moved]
        G[mi] = Gn
        sy = np.einsum("mi,mi->m", S, Y)
        upd = sy > 1e-12
        for k, row in zip(np.flatnonzero(upd), mi[upd]):
            rho = 1.0 / sy[k]
            V = np.eye(d) - rho * np.outer(S[k], Y[k])
            H[row] = V @ H[row] @ V.T + rho * np.outer(S[k], S[k])
    return X, fx


def start_points(
    bounds,
    restarts: int,
    state: RegimeState | None,
    incumbent_x,
    rng: np.random.Generator,
) -> np.ndarray:
    """Uniform draws, then regime centroids, then perturbations of the incumbent."""
    lo, hi = _as_bounds(bounds)
    parts = [lo + rng.random((restarts, lo.size)) * (hi - lo)]
    if state is not None:
        cents = [r.cache.inputs.mean(axis=0) for r in state.regimes if len(r.cache)]
        if cents:
            parts.append(np.clip(np.array(cents), lo, hi))
    if incumbent_x is not None:
        x0 = np.asarray(incumbent_x, dtype=float).reshape(1, -1)
        std = PERTURB_STD * (hi - lo) / 2.0
        parts.append(np.clip(x0 + rng.standard_normal((N_PERTURB, lo.size)) * std, lo, hi))
    return np.concatenate(parts, axis=0)


def _repeats(X: np.ndarray, avoid) -> np.ndarray:
    if avoid is None or len(avoid) == 0:
        return np.zeros(X.shape[0], dtype=bool)
    A = np.asarray(avoid, dtype=float)
    gap = np.min(np.max(np.abs(X[:, None, :] - A[None, :, :]), axis=2), axis=1)
    return gap < MIN_SEPARATION


def maximize(
    acq: Field,
    bounds,
    restarts: int,
    state: RegimeState | None,
    incumbent_x,
    rng: np.random.Generator,
    grad: Callable[[np.ndarray], np.ndarray] | None = None,
    max_iter: int = 100,
    gtol: float = 1e-6,
    avoid=None,
) -> AscentResult:
    """Multi-start ascent with full diagnostics; see :func:`optimize_acquisition`.

    Rows of ``avoid`` (already evaluated inputs) are never returned while
    some other converged point or start is available.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    lo, hi = _as_bounds(bounds)
    S = start_points(bounds, restarts, state, incumbent_x, rng)
    s_val = _evaluate(acq, S)
    try:
        X, fx = projected_quasi_newton(acq, S, lo, hi, grad, max_iter, gtol)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError):
        X, fx = S.copy(), np.full(S.shape[0], -np.inf)
    if not np.any(np.isfinite(fx)):
        k = int(np.argmax(s_val)) if np.any(np.isfinite(s_val)) else 0
        return AscentResult(S[k].copy(), float(s_val[k]), k, S, s_val, fallback=True)
    fx = np.where(_repeats(X, avoid), -np.inf, fx)
    if np.any(np.isfinite(fx)):
        k = int(np.argmax(fx))
        return AscentResult(X[k].copy(), float(fx[k]), k, S, s_val)
    s_ok = np.where(_repeats(S, avoid), -np.inf, s_val)
    k = int(np.argmax(s_ok)) if np.any(np.isfinite(s_ok)) else 0
    return AscentResult(S[k].copy(), float(s_val[k]), k, S, s_val)


def optimize_acquisition(acq: Field, bounds, restarts: int, state, incumbent_x, rng, **kwargs) -> np.ndarray:
    """In-bounds maximizer of a vectorized acquisition ``acq: (m, d) -> (m,)``.

    Start set: ``restarts`` uniform points, the centroid of each regime, and
    five Gaussian perturbations (std 0.05 in [-1, 1] units) of the incumbent.
    Ties go to the lowest start index.
    """
    return maximize(acq, bounds, restarts, state, incumbent_x, rng, **kwargs).x
