"""Mixture acquisition functions.

EI, PI and MES are weighted sums of per-regime closed forms; UCB works on
the moment-matched mixture. Thompson sampling draws a random-Fourier-feature
path from one regime and maximizes it. Every function broadcasts over leading
axes, so a batch of query points is scored in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import log_ndtr, ndtr
from scipy.stats import qmc

from .dpmm import RegimeState
from .gp import KernelHyperparams, predict
from .optimizer import maximize
from .predictive import MixturePrediction
from .prior import BaseMeasure, sample_base_measure

ACQUISITIONS = ("ei", "pi", "ucb", "ts", "mes")

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _pdf(z):
    return np.exp(-0.5 * z * z) / _SQRT_2PI


@dataclass
class AcquisitionContext:
    f_plus: float
    exploration_xi: float = 0.01
    ucb_beta: float = 2.0
    mes_samples: int = 10
    rff_features: int = 512

    def __post_init__(self):
        if not np.isfinite(self.f_plus):
            raise ValueError("incumbent must be finite")
        if self.exploration_xi < 0 or self.ucb_beta < 0:
            raise ValueError("xi and beta must be nonnegative")
        if self.mes_samples < 1 or self.rff_features < 1:
            raise ValueError("sample and feature counts must be >= 1")


def ei_mixture(pred: MixturePrediction, ctx: AcquisitionContext):
    """Weighted sum of per-regime expected improvements over ``f_plus``."""
    mu, w = pred.means, pred.weights
    sd = np.sqrt(pred.variances)
    tiny = sd < 1e-12
    safe = np.where(tiny, 1.0, sd)
    g = (mu - ctx.f_plus) / safe
    ei = safe * (g * ndtr(g) + _pdf(g))
    ei = np.where(tiny, np.maximum(mu - ctx.f_plus, 0.0), ei)
    return np.maximum(np.sum(w * ei, axis=-1), 0.0)


def pi_mixture(pred: MixturePrediction, ctx: AcquisitionContext):
    """Weighted probability of beating ``f_plus + xi``."""
    sd = np.sqrt(pred.variances)
    diff = pred.means - ctx.f_plus - ctx.exploration_xi
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, diff / np.where(sd > 0, sd, 1.0), np.where(diff > 0, np.inf, -np.inf))
    return np.clip(np.sum(pred.weights * ndtr(z), axis=-1), 0.0, 1.0)


def ucb_mixture(pred: MixturePrediction, ctx: AcquisitionContext):
    return pred.mu_mix + math.sqrt(ctx.ucb_beta) * np.sqrt(pred.var_mix)


def mes_mixture(pred: MixturePrediction, max_value_samples, ctx: AcquisitionContext | None = None):
    """Max-value entropy search estimate averaged over ``max_value_samples``."""
    ys = np.asarray(max_value_samples, dtype=float).reshape(-1)
    if ys.size < 1:
        raise ValueError("need at least one max-value sample")
    mu = pred.means[..., None, :]
    sd = np.maximum(np.sqrt(pred.variances), 1e-12)[..., None, :]
    g = (ys[:, None] - mu) / sd
    with np.errstate(over="ignore", invalid="ignore"):
        g = np.where(np.isposinf(g), 1e300, g)
        log_cdf = np.maximum(log_ndtr(g), math.log(1e-12))
        cdf = np.exp(log_cdf)
        term = g * _pdf(g) / (2.0 * cdf) - log_cdf
    term = np.where(np.isfinite(term), term, 0.0)
    val = np.sum(pred.weights[..., None, :] * term, axis=-1).mean(axis=-1)
    return np.maximum(val, 0.0)


# ---------------------------------------------------------------------------
# Max-value sampling
# ---------------------------------------------------------------------------


def _quantile(mu, sd, q, lo, hi):
    """y with prod_j Phi((y - mu_j)/sd_j) = q, by bisection."""
    target = math.log(q)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.sum(log_ndtr((mid - mu) / sd)) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10 * (1.0 + abs(mid)):
            break
    return 0.5 * (lo + hi)


def _fit_gumbel(mu, sd):
    """Location/scale matching the median and inter-quartile range of the max over candidates."""
    sd = np.maximum(sd, 1e-12)
    top = float(np.max(mu))
    spread = float(np.max(sd))
    lo, hi = top - 10.0 * spread - 1e-9, top + 10.0 * spread + 1e-9
    while np.sum(log_ndtr((hi - mu) / sd)) < math.log(0.75):
        hi += 10.0 * spread + 1e-9
    q1, q2, q3 = (_quantile(mu, sd, q, lo, hi) for q in (0.25, 0.5, 0.75))
    scale = (q3 - q1) / (math.log(-math.log(0.25)) - math.log(-math.log(0.75)))
    loc = q2 + scale * math.log(math.log(2.0))
    return loc, scale


def regime_probabilities(state: RegimeState, include_new: bool) -> np.ndarray:
    c = state.counts.astype(float)
    p = np.append(c, state.alpha) if include_new else c
    return p / p.sum()


def sample_max_values(
    state: RegimeState,
    bounds,
    s: int,
    rng: np.random.Generator,
    f_plus: float,
    n_candidates: int = 512,
) -> np.ndarray:
    """Approximate draws of the global maximum value.

    Each draw picks a regime by its share of the observations, fits a Gumbel
    to the maximum of that regime's posterior over the observed inputs plus
    ``n_candidates`` quasi-random points, and samples it. Draws are floored at
    ``f_plus + 1e-6``.
    """
    if s < 1:
        raise ValueError("s must be >= 1")
    b = np.atleast_2d(np.asarray(bounds, dtype=float))
    d = b.shape[0]
    sob = qmc.Sobol(d, scramble=True, seed=rng)
    with np.errstate(all="ignore"):
        U = sob.random(n_candidates)
    cand = b[:, 0] + U * (b[:, 1] - b[:, 0])
    observed = np.concatenate([r.cache.inputs for r in state.regimes], axis=0)
    C = np.concatenate([observed, cand], axis=0)
    probs = regime_probabilities(state, include_new=False)
    fits: dict[int, tuple[float, float]] = {}
    out = np.empty(s)
    for j in range(s):
        k = int(rng.choice(len(probs), p=probs))
        if k not in fits:
            r = state.regimes[k]
            mu, var = predict(r.cache, r.theta, C)
            fits[k] = _fit_gumbel(mu, np.sqrt(var))
        loc, scale = fits[k]
        u = rng.random()
        out[j] = loc - scale * math.log(-math.log(u))
    return np.maximum(out, f_plus + 1e-6)


# ---------------------------------------------------------------------------
# Thompson sampling with random Fourier features
# ---------------------------------------------------------------------------


@dataclass
class RffPath:
    """f(x) = sqrt(2 sf2 / D) cos(x W^T + b) @ w."""

    W: np.ndarray
    b: np.ndarray
    weights: np.ndarray
    amplitude: float

    def features(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.amplitude * np.cos(X @ self.W.T + self.b)

    def __call__(self, X) -> np.ndarray:
        return self.features(X) @ self.weights


def rff_path(
    theta: KernelHyperparams,
    inputs: np.ndarray,
    outputs: np.ndarray,
    n_features: int,
    rng: np.random.Generator,
    jitter: float = 0.0,
) -> RffPath:
    """One posterior function draw from an SE GP, via Bayesian linear regression
    on random Fourier features. Empty data gives a prior draw."""
    d = inputs.shape[1]
    W = rng.standard_normal((n_features, d)) / theta.length_scale
    b = rng.uniform(0.0, 2.0 * math.pi, n_features)
    path = RffPath(W, b, np.zeros(n_features), math.sqrt(2.0 * theta.signal_variance / n_features))
    z = rng.standard_normal(n_features)
    if inputs.shape[0] == 0:
        path.weights = z
        return path
    Phi = path.features(inputs)
    noise = theta.noise_variance + jitter
    A = Phi.T @ Phi / noise + np.eye(n_features)
    cf = cho_factor(A, lower=True, check_finite=False)
    mean = cho_solve(cf, Phi.T @ outputs / noise, check_finite=False)
    # A^{-1} = L^{-T} L^{-1}; L^{-T} z has covariance A^{-1}
    path.weights = mean + solve_triangular(cf[0], z, lower=True, trans="T", check_finite=False)
    return path


def thompson_sample(
    state: RegimeState,
    bounds,
    ctx: AcquisitionContext,
    rng: np.random.Generator,
    g0: BaseMeasure | None = None,
    restarts: int = 20,
    incumbent_x=None,
    avoid=None,
) -> np.ndarray:
    """Pick a regime (or a fresh one), draw an RFF path from it, return its maximizer.

    ``avoid`` lists inputs that should not be proposed again.
    """
    probs = regime_probabilities(state, include_new=True)
    k = int(rng.choice(len(probs), p=probs))
    d = np.atleast_2d(np.asarray(bounds)).shape[0]
    if k == state.n_regimes:
        g0 = g0 or BaseMeasure.calibrated(d)
        theta = sample_base_measure(g0, rng)
        path = rff_path(theta, np.zeros((0, d)), np.zeros(0), ctx.rff_features, rng)
    else:
        r = state.regimes[k]
        path = rff_path(r.theta, r.cache.inputs, r.cache.outputs, ctx.rff_features, rng, r.cache.jitter)
    return maximize(path, bounds, restarts, state, incumbent_x, rng, avoid=avoid).x
