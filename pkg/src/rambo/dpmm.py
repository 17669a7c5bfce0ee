"""Dirichlet-process machinery and the collapsed Gibbs sampler.

A :class:`RegimeState` holds the assignment vector and, per regime, its
hyperparameters and Cholesky cache. The latent functions are integrated out,
so a sweep only resamples assignments and then updates each regime's
hyperparameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gammaln

from .errors import InputError, NumericalError
from .gp import (
    KernelHyperparams,
    LOG_2PI,
    GpPosteriorCache,
    ObservationSet,
    _adam,
    build_cache,
    loo_predictive,
    mh_update_hyperparams,
    predict,
)
from .prior import BaseMeasure, sample_base_measure

HYPER_UPDATES = ("adam", "mh", "fixed")


@dataclass(frozen=True)
class Regime:
    theta: KernelHyperparams
    cache: GpPosteriorCache

    @property
    def members(self) -> np.ndarray:
        return self.cache.member_indices

    @property
    def count(self) -> int:
        return len(self.cache)

    def log_marginal(self) -> float:
        c = self.cache
        n = len(c)
        return (-0.5 * float(c.outputs @ c.alpha_vector)
                - float(np.sum(np.log(np.diag(c.cholesky_factor)))) - 0.5 * n * LOG_2PI)


def make_regime(data: ObservationSet, theta: KernelHyperparams, members) -> Regime:
    return Regime(theta, build_cache(data, theta, np.sort(np.asarray(members, dtype=int))))


@dataclass
class RegimeState:
    """Partition of the observations into regimes plus the concentration ``alpha``."""

    assignments: np.ndarray
    regimes: list[Regime]
    alpha: float

    def copy(self) -> "RegimeState":
        return RegimeState(self.assignments.copy(), list(self.regimes), self.alpha)

    @property
    def n_regimes(self) -> int:
        return len(self.regimes)

    @property
    def counts(self) -> np.ndarray:
        return np.array([r.count for r in self.regimes], dtype=int)

    def check(self, n: int | None = None) -> None:
        """Raise AssertionError if an invariant is broken."""
        z = self.assignments
        if n is not None:
            assert z.shape[0] == n, "assignment vector length"
        assert self.counts.sum() == z.shape[0], "counts do not sum to n"
        assert np.all(self.counts > 0), "empty regime persisted"
        assert np.all((z >= 0) & (z < self.n_regimes)), "assignment out of range"
        for k, r in enumerate(self.regimes):
            assert np.array_equal(np.sort(np.flatnonzero(z == k)), r.members), f"regime {k} membership"

    def partition(self) -> tuple[int, ...]:
        """Assignment labels relabelled by first appearance (label-switching free)."""
        return canonical_labels(self.assignments)


def canonical_labels(z) -> tuple[int, ...]:
    seen: dict[int, int] = {}
    return tuple(seen.setdefault(int(k), len(seen)) for k in z)


@dataclass
class GibbsConfig:
    """Knobs for the sampler. Defaults follow the engine's documented choices."""

    mc_samples: int = 16
    hyper_update: str = "adam"
    adam_steps: int = 100
    learning_rate: float = 0.05
    patience: int | None = 20
    new_regime_steps: int = 20
    mh_steps: int = 5
    mh_step_scale: float = 0.2

    def __post_init__(self):
        if self.hyper_update not in HYPER_UPDATES:
            raise InputError(f"hyper_update must be one of {HYPER_UPDATES}")
        if self.mc_samples < 1 or self.adam_steps < 1:
            raise InputError("mc_samples and adam_steps must be >= 1")


@dataclass
class GibbsDiagnostics:
    sweep_count: int = 0
    regime_counts: list[int] = field(default_factory=list)
    joint_log_likelihood: list[float] = field(default_factory=list)
    move_rates: list[float] = field(default_factory=list)
    acceptance_rates: list[float] = field(default_factory=list)

    def record(self, state: RegimeState, moves: float, accept: float) -> None:
        self.sweep_count += 1
        self.regime_counts.append(state.n_regimes)
        self.joint_log_likelihood.append(joint_log_likelihood(state))
        self.move_rates.append(moves)
        self.acceptance_rates.append(accept)


# ---------------------------------------------------------------------------
# CRP and base-measure primitives
# ---------------------------------------------------------------------------


def crp_prior_probs(counts, alpha: float) -> np.ndarray:
    """Probabilities of joining each existing table, then of opening a new one."""
    c = np.asarray(counts, dtype=float).reshape(-1)
    if np.any(c < 0) or not alpha > 0:
        raise InputError("counts must be nonnegative and alpha positive")
    total = c.sum() + alpha
    return np.append(c, alpha) / total


def crp_log_prob(z, alpha: float) -> float:
    """Log probability of a labelled partition under the CRP."""
    _, counts = np.unique(np.asarray(z), return_counts=True)
    n = counts.sum()
    return float(len(counts) * math.log(alpha) + gammaln(counts).sum()
                 + gammaln(alpha) - gammaln(alpha + n))


def joint_log_likelihood(state: RegimeState) -> float:
    """CRP log prior of the partition plus every regime's log marginal likelihood."""
    return crp_log_prob(state.assignments, state.alpha) + sum(r.log_marginal() for r in state.regimes)


def new_cluster_likelihood_mc(y: float, x, g0: BaseMeasure, m: int, rng: np.random.Generator) -> float:
    """Monte Carlo estimate of the prior predictive density of ``y`` under ``g0``.

    The SE kernel is stationary, so k(x, x) is the signal variance and ``x``
    only matters for its dimension.
    """
    return math.exp(_log_new_cluster_likelihood(y, g0, m, rng))


def _log_new_cluster_likelihood(y, g0: BaseMeasure, m: int, rng) -> np.ndarray | float:
    """Log of the MC prior predictive for a scalar or a vector of outputs;
    each output gets its own ``m`` draws."""
    if m < 1:
        raise InputError("m must be >= 1")
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    v = g0.sample_values(ys.shape[0] * m, rng).reshape(ys.shape[0], m, 3)
    tot = v[..., 0] + v[..., 2]
    logp = -0.5 * (LOG_2PI + np.log(tot) + ys[:, None] ** 2 / tot)
    top = logp.max(axis=1)
    out = top + np.log(np.exp(logp - top[:, None]).sum(axis=1)) - math.log(m)
    return float(out[0]) if np.ndim(y) == 0 else out


def _normal_logpdf(y, mu, var):
    return -0.5 * (LOG_2PI + np.log(var) + (y - mu) ** 2 / var)


def _draw(logw: np.ndarray, rng: np.random.Generator) -> int:
    p = np.exp(logw - logw.max())
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(c) - 1))


def alpha_schedule(t: int, alpha0: float) -> float:
    """Log-sqrt concentration schedule ``alpha0 * sqrt(t) / ln(t + e)``."""
    if t < 1 or not alpha0 > 0:
        raise InputError("t must be >= 1 and alpha0 > 0")
    return alpha0 * math.sqrt(t) / math.log(t + math.e)


def expected_clusters(n: int, alpha: float) -> float:
    """Exact prior expectation of the number of CRP blocks among ``n`` customers."""
    if n < 1 or not alpha > 0:
        raise InputError("n must be >= 1 and alpha > 0")
    i = np.arange(1, n + 1, dtype=float)
    return float(np.sum(alpha / (i - 1.0 + alpha)))


def simulate_crp(n: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Seat ``n`` customers sequentially; returns block labels in order of creation."""
    if n < 1:
        raise InputError("n must be >= 1")
    z = np.empty(n, dtype=int)
    counts: list[int] = []
    for i in range(n):
        p = crp_prior_probs(counts, alpha)
        k = int(min(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"), len(p) - 1))
        if k == len(counts):
            counts.append(1)
        else:
            counts[k] += 1
        z[i] = k
    return z


# ---------------------------------------------------------------------------
# State construction and maintenance
# ---------------------------------------------------------------------------


def _instantiate_theta(data, i, g0, rng, config: GibbsConfig) -> KernelHyperparams:
    """Hyperparameters for a regime opened by observation ``i``: one base-measure
    draw refined by a few Adam steps on that point's marginal likelihood."""
    theta = sample_base_measure(g0, rng)
    if g0.pinned is not None or config.hyper_update == "fixed" or config.new_regime_steps < 1:
        return theta
    X, y = data.inputs[i:i + 1], data.outputs[i:i + 1]
    u, _ = _adam(X, y, theta.log_array, config.new_regime_steps, config.learning_rate)
    return KernelHyperparams.from_log(u)


def initial_state(
    data: ObservationSet,
    alpha: float,
    g0: BaseMeasure,
    rng_partition: np.random.Generator,
    rng_theta: np.random.Generator,
) -> RegimeState:
    """Random starting point: a CRP partition with base-measure hyperparameters.

    Partition and hyperparameter draws come from separate generators so a run
    whose partition is forced to a single block draws the same hyperparameters.
    """
    z = simulate_crp(len(data), alpha, rng_partition)
    regimes = []
    for k in range(int(z.max()) + 1):
        regimes.append(make_regime(data, sample_base_measure(g0, rng_theta), np.flatnonzero(z == k)))
    return RegimeState(z, regimes, alpha)


def single_regime_state(data: ObservationSet, theta: KernelHyperparams, alpha: float) -> RegimeState:
    n = len(data)
    return RegimeState(np.zeros(n, dtype=int), [make_regime(data, theta, np.arange(n))], alpha)


def refresh(state: RegimeState, data: ObservationSet) -> RegimeState:
    """Rebuild every cache against ``data`` (e.g. after re-standardization)."""
    out = state.copy()
    out.regimes = [make_regime(data, r.theta, r.members) for r in state.regimes]
    return out


def _remove_regime(state: RegimeState, k: int) -> None:
    del state.regimes[k]
    state.assignments[state.assignments > k] -= 1


def _candidates(state, data, i, g0, m, rng, preds=None, log_new=None):
    """Log weights for placing observation ``i``: existing regimes (leave-one-out
    where ``i`` is a member), then a fresh regime. Returns (regime ids, log w)."""
    y = data.outputs[i]
    ks, logw = [], []
    for k, r in enumerate(state.regimes):
        pos = np.searchsorted(r.members, i)
        member = pos < r.count and r.members[pos] == i
        cnt = r.count - 1 if member else r.count
        if cnt == 0:
            continue
        if member:
            mu_all, var_all = (preds[k][2], preds[k][3]) if preds is not None else loo_predictive(r.cache)
            mu, var = mu_all[pos], var_all[pos]
        elif preds is not None:
            mu, var = preds[k][0][i], preds[k][1][i]
        else:
            mu, var = predict(r.cache, r.theta, data.inputs[i:i + 1], noisy=True)
            mu, var = mu[0], var[0]
        ks.append(k)
        logw.append(math.log(cnt) + _normal_logpdf(y, mu, var))
    ks.append(-1)
    if log_new is None:
        log_new = _log_new_cluster_likelihood(y, g0, m, rng)
    logw.append(math.log(state.alpha) + log_new)
    # The CRP denominator (n - 1 + alpha) is common to every entry.
    return ks, np.array(logw, dtype=float)


def assignment_probs(
    state: RegimeState,
    data: ObservationSet,
    i: int,
    g0: BaseMeasure,
    m: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Conditional probabilities for observation ``i``'s regime.

    ``i`` is left out of its current regime (counts and predictive). Entries
    follow the surviving regimes in order, then the new-regime option; a
    regime that ``i`` alone occupies is not offered.
    """
    _, logw = _candidates(state, data, i, g0, m, rng)
    p = np.exp(logw - logw.max())
    return p / p.sum()


def _update_theta(data, reg: Regime, g0, rng, config: GibbsConfig) -> tuple[Regime, float]:
    """Per-regime hyperparameter step; returns the new regime and MH acceptance."""
    if config.hyper_update == "fixed":
        return reg, float("nan")
    sub = data.subset(reg.members)
    try:
        if config.hyper_update == "adam":
            u, _ = _adam(sub.inputs, sub.outputs, reg.theta.log_array,
                         config.adam_steps, config.learning_rate, config.patience)
            theta, acc = KernelHyperparams.from_log(u), float("nan")
        else:
            theta, accepted = reg.theta, 0
            for _ in range(config.mh_steps):
                new = mh_update_hyperparams(sub, theta, config.mh_step_scale, rng, g0)
                accepted += new != theta
                theta = new
            acc = accepted / config.mh_steps
        if theta == reg.theta:
            return reg, acc
        return make_regime(data, theta, reg.members), acc
    except NumericalError:
        return reg, float("nan")


def gibbs_sweep(
    state: RegimeState,
    data: ObservationSet,
    g0: BaseMeasure,
    rng: np.random.Generator,
    config: GibbsConfig | None = None,
    _stats: dict | None = None,
) -> RegimeState:
    """One collapsed Gibbs scan in index order, then a hyperparameter update
    for every active regime. Returns a new state."""
    config = config or GibbsConfig()
    st = state.copy()
    n = len(data)
    moves = 0
    # Batched predictives per regime, rebuilt lazily when a regime changes.
    preds: dict[int, tuple] = {}

    def pred(k):
        r = st.regimes[k]
        hit = preds.get(id(r))
        if hit is None or hit[0] is not r:
            mu, var = predict(r.cache, r.theta, data.inputs, noisy=True)
            lmu, lvar = loo_predictive(r.cache)
            hit = preds[id(r)] = (r, (mu, var, lmu, lvar))
        return hit[1]

    class _View:
        def __getitem__(self, k):
            return pred(k)

    view = _View()
    log_new = _log_new_cluster_likelihood(data.outputs, g0, config.mc_samples, rng)
    for i in range(n):
        k_old = int(st.assignments[i])
        ks, logw = _candidates(st, data, i, g0, config.mc_samples, rng, preds=view,
                               log_new=float(log_new[i]))
        choice = ks[_draw(logw, rng)]
        if choice == k_old:
            continue
        moves += 1
        old = st.regimes[k_old]
        if old.count == 1:
            _remove_regime(st, k_old)
            if choice > k_old:
                choice -= 1
        else:
            st.regimes[k_old] = make_regime(data, old.theta, old.members[old.members != i])
        if choice == -1:
            theta = _instantiate_theta(data, i, g0, rng, config)
            st.regimes.append(make_regime(data, theta, [i]))
            st.assignments[i] = len(st.regimes) - 1
        else:
            tgt = st.regimes[choice]
            st.regimes[choice] = make_regime(data, tgt.theta, np.append(tgt.members, i))
            st.assignments[i] = choice
    acc = []
    for k in range(st.n_regimes):
        st.regimes[k], a = _update_theta(data, st.regimes[k], g0, rng, config)
        acc.append(a)
    if _stats is not None:
        _stats["moves"] = moves / max(n, 1)
        finite = [a for a in acc if np.isfinite(a)]
        _stats["accept"] = float(np.mean(finite)) if finite else float("nan")
    return st


def run_gibbs(
    state: RegimeState,
    data: ObservationSet,
    g0: BaseMeasure,
    sweeps: int,
    rng: np.random.Generator,
    config: GibbsConfig | None = None,
    on_sweep: Callable[[RegimeState], None] | None = None,
) -> tuple[RegimeState, GibbsDiagnostics]:
    """Apply ``sweeps`` Gibbs sweeps; the final state warm-starts the next call."""
    if sweeps < 1:
        raise InputError("sweeps must be >= 1")
    diag = GibbsDiagnostics()
    for _ in range(sweeps):
        stats: dict = {}
        state = gibbs_sweep(state, data, g0, rng, config, _stats=stats)
        diag.record(state, stats["moves"], stats["accept"])
        if on_sweep is not None:
            on_sweep(state)
    return state, diag


def add_observation(
    state: RegimeState,
    data: ObservationSet,
    g0: BaseMeasure,
    rng: np.random.Generator,
    config: GibbsConfig | None = None,
) -> RegimeState:
    """Seat the last row of ``data`` (not yet in ``state``) by sampling its
    conditional over existing regimes and a new one."""
    config = config or GibbsConfig()
    i = len(data) - 1
    st = RegimeState(np.append(state.assignments, -1), list(state.regimes), state.alpha)
    ks, logw = _candidates(st, data, i, g0, config.mc_samples, rng)
    choice = ks[_draw(logw, rng)]
    if choice == -1:
        theta = _instantiate_theta(data, i, g0, rng, config)
        st.regimes.append(make_regime(data, theta, [i]))
        st.assignments[i] = st.n_regimes - 1
    else:
        tgt = st.regimes[choice]
        st.regimes[choice] = make_regime(data, tgt.theta, np.append(tgt.members, i))
        st.assignments[i] = choice
    return st


def prune_regimes(state: RegimeState, data: ObservationSet, weight_floor: float) -> RegimeState:
    """Drop empty regimes and those whose weight ``n_k / (n + alpha)`` is below
    ``weight_floor``; orphans join their most probable survivor.

    The largest regime always survives.
    """
    n = len(data)
    counts = state.counts
    weights = counts / (n + state.alpha)
    keep = (counts > 0) & (weights >= weight_floor)
    if not keep.any():
        keep[int(np.argmax(counts))] = True
    if keep.all():
        return state
    survivors = [r for r, k in zip(state.regimes, keep) if k]
    orphans = np.sort(np.concatenate(
        [r.members for r, k in zip(state.regimes, keep) if not k] + [np.zeros(0, dtype=int)]))
    relabel = np.cumsum(keep) - 1
    z = np.where(keep[state.assignments], relabel[state.assignments], -1)
    st = RegimeState(z, survivors, state.alpha)
    for i in orphans:
        best, best_lw = 0, -np.inf
        for k, r in enumerate(st.regimes):
            mu, var = predict(r.cache, r.theta, data.inputs[i:i + 1], noisy=True)
            lw = math.log(r.count) + float(_normal_logpdf(data.outputs[i], mu[0], var[0]))
            if lw > best_lw:
                best, best_lw = k, lw
        tgt = st.regimes[best]
        st.regimes[best] = make_regime(data, tgt.theta, np.append(tgt.members, i))
        st.assignments[i] = best
    return st


def modal_partition(partitions) -> tuple[tuple[int, ...], float]:
    """Most frequent canonical partition among samples and its frequency."""
    tally: dict[tuple[int, ...], int] = {}
    for p in partitions:
        key = canonical_labels(p)
        tally[key] = tally.get(key, 0) + 1
    best = max(tally.items(), key=lambda kv: kv[1])
    return best[0], best[1] / sum(tally.values())


__all__ = [
    "GibbsConfig",
    "GibbsDiagnostics",
    "Regime",
    "RegimeState",
    "add_observation",
    "alpha_schedule",
    "assignment_probs",
    "canonical_labels",
    "crp_log_prob",
    "crp_prior_probs",
    "expected_clusters",
    "gibbs_sweep",
    "initial_state",
    "joint_log_likelihood",
    "make_regime",
    "modal_partition",
    "new_cluster_likelihood_mc",
    "prune_regimes",
    "refresh",
    "run_gibbs",
    "simulate_crp",
    "single_regime_state",
]
