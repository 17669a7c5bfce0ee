"""Exact single-regime Gaussian process machinery.

Everything here works on one squared-exponential GP: kernel evaluation,
Cholesky caches, posterior prediction, the log marginal likelihood and its
gradient in log-parameter space, and two hyperparameter updates (Adam ascent
and a Metropolis-Hastings step). The mixture code calls these per regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import InputError, NumericalError

if TYPE_CHECKING:
    from .prior import BaseMeasure

LOG_2PI = math.log(2.0 * math.pi)

# Jitter on the diagonal, relative to the signal variance.
JITTER_START = 1e-6
JITTER_MAX = 1e-2

# Box on the log-parameters (signal variance, length scale, noise variance)
# applied during gradient ascent so tiny regimes cannot run off to degenerate
# optima.
LOG_BOUNDS = np.log(np.array([[1e-4, 1e4], [1e-3, 1e3], [1e-6, 1e2]]))


@dataclass(frozen=True)
class KernelHyperparams:
    """SE kernel hyperparameters, stored as logarithms so positivity is structural."""

    log_signal_variance: float
    log_length_scale: float
    log_noise_variance: float

    @classmethod
    def from_values(cls, signal_variance: float, length_scale: float, noise_variance: float):
        vals = (signal_variance, length_scale, noise_variance)
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise InputError(f"hyperparameters must be finite and positive, got {vals}")
        return cls(*(float(math.log(v)) for v in vals))

    @classmethod
    def from_log(cls, log_params) -> "KernelHyperparams":
        u = np.asarray(log_params, dtype=float)
        if u.shape != (3,) or not np.all(np.isfinite(u)):
            raise InputError(f"expected 3 finite log-parameters, got {log_params!r}")
        return cls(float(u[0]), float(u[1]), float(u[2]))

    @property
    def signal_variance(self) -> float:
        return math.exp(self.log_signal_variance)

    @property
    def length_scale(self) -> float:
        return math.exp(self.log_length_scale)

    @property
    def noise_variance(self) -> float:
        return math.exp(self.log_noise_variance)

    @property
    def log_array(self) -> np.ndarray:
        return np.array([self.log_signal_variance, self.log_length_scale, self.log_noise_variance])

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_array)

    def as_dict(self) -> dict[str, float]:
        return {
            "signal_variance": self.signal_variance,
            "length_scale": self.length_scale,
            "noise_variance": self.noise_variance,
        }


@dataclass(frozen=True)
class ObservationSet:
    """Inputs (n, d), outputs (n,), and the box ``bounds`` (d, 2) they live in.

    ``bounds`` defaults to [-1, 1]^d, the normalized space the model works in.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    bounds: np.ndarray | None = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.asarray(self.outputs, dtype=float).reshape(-1)
        if X.size == 0:
            X = X.reshape(0, X.shape[-1] if X.ndim == 2 else 1)
        if X.shape[0] != y.shape[0]:
            raise InputError(f"{X.shape[0]} inputs but {y.shape[0]} outputs")
        if self.bounds is None:
            b = np.tile([-1.0, 1.0], (X.shape[1], 1))
        else:
            b = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        if b.shape != (X.shape[1], 2) or np.any(b[:, 0] >= b[:, 1]):
            raise InputError(f"bounds must be ({X.shape[1]}, 2) with lo < hi")
        tol = 1e-9 * (b[:, 1] - b[:, 0])
        if X.shape[0] and (np.any(X < b[:, 0] - tol) or np.any(X > b[:, 1] + tol)):
            raise InputError("an input lies outside the bounds")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", y)
        object.__setattr__(self, "bounds", b)

    def __len__(self) -> int:
        return self.outputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices) -> "ObservationSet":
        idx = np.asarray(indices, dtype=int)
        return ObservationSet(self.inputs[idx], self.outputs[idx], self.bounds)


@dataclass
class GpPosteriorCache:
    """Cholesky factor of ``K + (noise + jitter) I`` over one regime's members.

    ``inputs``/``outputs`` are copies of the member rows so predictions do not
    need the parent set.
    """

    cholesky_factor: np.ndarray
    alpha_vector: np.ndarray
    member_indices: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    jitter: float
    _inverse: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.member_indices.shape[0]

    @property
    def inverse(self) -> np.ndarray:
        if self._inverse is None:
            n = len(self)
            self._inverse = cho_solve((self.cholesky_factor, True), np.eye(n), check_finite=False)
        return self._inverse


def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def se_kernel(x, x_prime, theta: KernelHyperparams) -> float:
    """Squared-exponential covariance between two points."""
    a = np.atleast_1d(np.asarray(x, dtype=float))
    b = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if a.shape != b.shape:
        raise InputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    r2 = float(np.dot(a - b, a - b))
    return theta.signal_variance * math.exp(-0.5 * r2 / theta.length_scale**2)


def kernel_matrix(A: np.ndarray, B: np.ndarray, theta: KernelHyperparams) -> np.ndarray:
    return theta.signal_variance * np.exp(-0.5 * _sqdist(A, B) / theta.length_scale**2)


def _factor(K: np.ndarray, signal_variance: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K + jitter I`` with escalating jitter."""
    n = K.shape[0]
    jitter = JITTER_START * signal_variance
    eye = np.eye(n)
    while True:
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > JITTER_MAX * signal_variance * (1 + 1e-9):
                try:
                    cond = float(np.linalg.cond(K))
                except np.linalg.LinAlgError:
                    cond = float("inf")
                raise NumericalError(
                    f"Cholesky failed for a {n}x{n} kernel matrix after jitter escalation",
                    condition=cond,
                ) from None


def build_cache(data: ObservationSet, theta: KernelHyperparams, members=None) -> GpPosteriorCache:
    """Factor the regime covariance over ``members`` (all rows when None)."""
    idx = np.arange(len(data)) if members is None else np.asarray(members, dtype=int)
    X = data.inputs[idx]
    y = data.outputs[idx]
    return _cache_from_arrays(X, y, idx, theta)


def _cache_from_arrays(X, y, idx, theta: KernelHyperparams) -> GpPosteriorCache:
    sf2 = theta.signal_variance
    if len(idx) == 0:
        empty = np.zeros((0, 0))
        return GpPosteriorCache(empty, np.zeros(0), idx, X, y, JITTER_START * sf2)
    K = kernel_matrix(X, X, theta)
    K[np.diag_indices_from(K)] += theta.noise_variance
    L, jitter = _factor(K, sf2)
    alpha = cho_solve((L, True), y, check_finite=False)
    return GpPosteriorCache(L, alpha, idx, X, y, jitter)


def predict(cache: GpPosteriorCache | None, theta: KernelHyperparams, Xstar, noisy: bool = False):
    """Posterior mean and variance at each row of ``Xstar``.

    The variance is of the latent function unless ``noisy``, in which case it
    is the predictive variance of a fresh observation (noise and jitter
    included). Tiny negative variances from round-off are clamped to 0.
    """
    Xs = np.atleast_2d(np.asarray(Xstar, dtype=float))
    sf2 = theta.signal_variance
    prior_var = np.full(Xs.shape[0], sf2)
    if noisy:
        jitter = cache.jitter if cache is not None else JITTER_START * sf2
        prior_var = prior_var + theta.noise_variance + jitter
    if cache is None or len(cache) == 0:
        return np.zeros(Xs.shape[0]), prior_var
    if Xs.shape[1] != cache.inputs.shape[1]:
        raise InputError(f"query dimension {Xs.shape[1]} != data dimension {cache.inputs.shape[1]}")
    Ks = kernel_matrix(cache.inputs, Xs, theta)  # (n, m)
    mean = Ks.T @ cache.alpha_vector
    v = solve_triangular(cache.cholesky_factor, Ks, lower=True, check_finite=False)
    var = prior_var - np.einsum("ij,ij->j", v, v)
    return mean, np.maximum(var, 0.0)


def gp_posterior(cache, data, theta: KernelHyperparams, x_star) -> tuple[float, float]:
    """Latent posterior (mean, variance) at one point.

    ``data`` is accepted for signature symmetry with the cache's parent set;
    the cache already carries the member rows.
    """
    x = np.atleast_1d(np.asarray(x_star, dtype=float))
    if data is not None and len(data) and x.shape[0] != data.dim:
        raise InputError(f"query dimension {x.shape[0]} != data dimension {data.dim}")
    mean, var = predict(cache, theta, x[None, :])
    return float(mean[0]), float(var[0])


def loo_predictive(cache: GpPosteriorCache) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out predictive (mean, variance) of each member's observation.

    Uses the inverse-covariance identities, so the result equals conditioning
    on the remaining members without refactoring.
    """
    Kinv = cache.inverse
    d = np.diag(Kinv)
    return cache.outputs - cache.alpha_vector / d, 1.0 / d


def _lml_and_grad(X: np.ndarray, y: np.ndarray, log_params: np.ndarray, want_grad: bool = True,
                  r2: np.ndarray | None = None):
    """Log marginal likelihood and its gradient w.r.t. the log-parameters."""
    sf2, ell, sn2 = np.exp(log_params)
    n = y.shape[0]
    if r2 is None:
        r2 = _sqdist(X, X)
    Kf = sf2 * np.exp(-0.5 * r2 / ell**2)
    K = Kf.copy()
    K[np.diag_indices(n)] += sn2
    L, jitter = _factor(K, sf2)
    Linv = solve_triangular(L, np.eye(n), lower=True, check_finite=False)
    b = Linv @ y
    val = -0.5 * float(b @ b) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * LOG_2PI
    if not want_grad:
        return val, None
    W = Linv.T @ Linv
    a = Linv.T @ b
    A = np.outer(a, a) - W
    # dK/dlog(sf2) includes the jitter, which scales with sf2.
    g_sf = 0.5 * (np.sum(A * Kf) + jitter * np.trace(A))
    g_ell = 0.5 * np.sum(A * (Kf * r2 / ell**2))
    g_sn = 0.5 * sn2 * np.trace(A)
    return val, np.array([g_sf, g_ell, g_sn])


def log_marginal_likelihood(data_subset: ObservationSet, theta: KernelHyperparams) -> float:
    """log N(y | 0, K + noise I) over the subset."""
    if len(data_subset) == 0:
        raise InputError("log marginal likelihood needs at least one observation")
    val, _ = _lml_and_grad(data_subset.inputs, data_subset.outputs, theta.log_array, want_grad=False)
    return val


def lml_gradient(data_subset: ObservationSet, theta: KernelHyperparams) -> np.ndarray:
    """Gradient of the log marginal likelihood w.r.t. (log sf2, log ell, log sn2)."""
    _, g = _lml_and_grad(data_subset.inputs, data_subset.outputs, theta.log_array)
    return g


def _adam(X, y, u0, steps, learning_rate, patience=None, beta1=0.9, beta2=0.999, eps=1e-8,
          min_gain=1e-4):
    """Best-seen Adam ascent. ``patience`` counts evaluations without a gain of
    at least ``min_gain`` in the objective."""
    r2 = _sqdist(X, X)
    u = np.clip(np.array(u0, dtype=float), LOG_BOUNDS[:, 0], LOG_BOUNDS[:, 1])
    m = np.zeros(3)
    v = np.zeros(3)
    best_u = np.array(u0, dtype=float)
    best_val = -np.inf
    if not np.array_equal(u, best_u):
        try:
            best_val, _ = _lml_and_grad(X, y, best_u, want_grad=False, r2=r2)
        except NumericalError:
            pass
    mark = best_val
    stall = 0
    for t in range(1, steps + 2):
        try:
            val, g = _lml_and_grad(X, y, u, want_grad=t <= steps, r2=r2)
        except NumericalError:
            break
        if not np.isfinite(val):
            break
        if val > best_val:
            best_val, best_u = val, u.copy()
        if best_val > mark + min_gain:
            mark = best_val
            stall = 0
        else:
            stall += 1
        if t > steps or (patience is not None and stall >= patience):
            break
        if not np.all(np.isfinite(g)):
            break
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        u = u + learning_rate * mhat / (np.sqrt(vhat) + eps)
        u = np.clip(u, LOG_BOUNDS[:, 0], LOG_BOUNDS[:, 1])
    return best_u, best_val


def optimize_hyperparams(
    data_subset: ObservationSet,
    theta_init: KernelHyperparams,
    steps: int = 100,
    learning_rate: float = 0.05,
    patience: int | None = None,
) -> KernelHyperparams:
    """Adam ascent on the log marginal likelihood in log-parameter space.

    Returns the best iterate seen, so the result never scores below
    ``theta_init``. With ``patience`` set, stops once the best value has not
    improved for that many consecutive evaluations.
    """
    if steps < 1:
        raise InputError("steps must be >= 1")
    if len(data_subset) == 0:
        raise InputError("cannot fit hyperparameters to an empty subset")
    best_u, _ = _adam(data_subset.inputs, data_subset.outputs, theta_init.log_array,
                      steps, learning_rate, patience)
    return KernelHyperparams.from_log(best_u)


def mh_update_hyperparams(
    data_subset: ObservationSet,
    theta: KernelHyperparams,
    step_scale: float,
    rng: np.random.Generator,
    g0: "BaseMeasure | None" = None,
    steps: int = 1,
) -> KernelHyperparams:
    """Metropolis-Hastings with a multiplicative log-normal proposal.

    The target is the marginal likelihood times the Inverse-Gamma base measure
    ``g0`` (calibrated default when None). Working in log-space makes the
    proposal symmetric; the prior density there carries the Jacobian.
    """
    from .prior import BaseMeasure

    if not step_scale > 0:
        raise InputError("step_scale must be positive")
    g0 = g0 if g0 is not None else BaseMeasure.calibrated(data_subset.dim)
    X, y = data_subset.inputs, data_subset.outputs
    u = theta.log_array
    cur, _ = _lml_and_grad(X, y, u, want_grad=False)
    cur += g0.log_density(u)
    for _ in range(steps):
        prop = u + step_scale * rng.standard_normal(3)
        log_u = math.log(rng.random())
        try:
            val, _ = _lml_and_grad(X, y, prop, want_grad=False)
        except NumericalError:
            continue
        val += g0.log_density(prop)
        if np.isfinite(val) and log_u < val - cur:
            u, cur = prop, val
    return KernelHyperparams.from_log(u)
