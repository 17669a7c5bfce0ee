"""Posterior predictive mixture at query points.

Each regime contributes its GP posterior; gating weights combine the CRP
mass of the regime with how confident it is at the query (weights scale as
1/sigma). Moment matching collapses the mixture to a mean and variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dpmm import RegimeState
from .gp import predict
from .prior import BaseMeasure

SIGMA_FLOOR = 1e-6


@dataclass
class MixturePrediction:
    """Components and weights along the last axis; leading axes index query points."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    mu_mix: np.ndarray | float
    var_mix: np.ndarray | float

    @property
    def n_components(self) -> int:
        return self.weights.shape[-1]

    @property
    def std_mix(self):
        return np.sqrt(self.var_mix)


def mixture_moments(means, variances, weights):
    """Mean and variance of a Gaussian mixture (laws of total expectation/variance)."""
    mu = np.asarray(means, dtype=float)
    var = np.asarray(variances, dtype=float)
    w = np.asarray(weights, dtype=float)
    if not (mu.shape == var.shape == w.shape):
        raise ValueError("means, variances and weights must have matching shapes")
    mu_mix = np.sum(w * mu, axis=-1)
    var_mix = np.sum(w * (var + mu * mu), axis=-1) - mu_mix * mu_mix
    var_mix = np.maximum(var_mix, 0.0)
    if mu_mix.ndim == 0:
        return float(mu_mix), float(var_mix)
    return mu_mix, var_mix


def new_regime_variance(g0: BaseMeasure, m: int, rng: np.random.Generator) -> float:
    """MC average of the prior variance k(x, x) of a fresh regime."""
    return float(np.mean(g0.sample_values(m, rng)[:, 0]))


def _component_arrays(state: RegimeState, X: np.ndarray):
    mus, vs = [], []
    for r in state.regimes:
        mu, var = predict(r.cache, r.theta, X)
        mus.append(mu)
        vs.append(var)
    return np.stack(mus, axis=-1), np.stack(vs, axis=-1)


def _gate(counts, alpha, variances, new_variance=None):
    n = float(np.sum(counts))
    prior = np.asarray(counts, dtype=float) / (n + alpha)
    sd = np.maximum(np.sqrt(variances), SIGMA_FLOOR)
    w = prior / sd
    if new_variance is not None:
        w_new = (alpha / (n + alpha)) / max(np.sqrt(new_variance), SIGMA_FLOOR)
        w = np.concatenate([w, np.broadcast_to(w_new, w.shape[:-1] + (1,))], axis=-1)
    return w / np.sum(w, axis=-1, keepdims=True)


def gating_weights(
    state: RegimeState,
    x_star,
    include_new: bool = False,
    g0: BaseMeasure | None = None,
    m: int = 16,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Normalized gating weights at one query point (K, or K+1 with the new regime)."""
    X = np.atleast_2d(np.asarray(x_star, dtype=float))
    _, var = _component_arrays(state, X)
    new_var = None
    if include_new:
        if g0 is None or rng is None:
            raise ValueError("include_new needs the base measure and a generator")
        new_var = new_regime_variance(g0, m, rng)
    return _gate(state.counts, state.alpha, var, new_var)[0]


def mixture_predict_batch(
    state: RegimeState,
    X,
    include_new: bool = False,
    g0: BaseMeasure | None = None,
    m: int = 16,
    rng: np.random.Generator | None = None,
    new_variance: float | None = None,
) -> MixturePrediction:
    """Mixture prediction at every row of ``X``.

    With ``include_new`` the extra component has mean 0 and the MC prior
    variance (pass ``new_variance`` to reuse a precomputed value).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mu, var = _component_arrays(state, X)
    if include_new:
        if new_variance is None:
            if g0 is None or rng is None:
                raise ValueError("include_new needs the base measure and a generator")
            new_variance = new_regime_variance(g0, m, rng)
        w = _gate(state.counts, state.alpha, var, new_variance)
        mu = np.concatenate([mu, np.zeros((X.shape[0], 1))], axis=-1)
        var = np.concatenate([var, np.full((X.shape[0], 1), new_variance)], axis=-1)
    else:
        w = _gate(state.counts, state.alpha, var)
    mu_mix, var_mix = mixture_moments(mu, var, w)
    return MixturePrediction(mu, var, w, mu_mix, var_mix)


def mixture_predict(state: RegimeState, x_star, include_new: bool = False, **kwargs) -> MixturePrediction:
    """Mixture prediction at a single point; arrays are 1-D over components."""
    p = mixture_predict_batch(state, np.atleast_2d(np.asarray(x_star, dtype=float)), include_new, **kwargs)
    return MixturePrediction(p.means[0], p.variances[0], p.weights[0], float(p.mu_mix[0]), float(p.var_mix[0]))
