"""Inverse-Gamma base measure over per-regime kernel hyperparameters."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .gp import KernelHyperparams


@dataclass(frozen=True)
class BaseMeasure:
    """Independent Inverse-Gamma priors on (signal variance, length scale, noise variance).

    ``pinned`` turns the measure into a point mass at a fixed triple. That is
    used by exactness tests, where every regime must share known
    hyperparameters.
    """

    shape_signal: float = 2.0
    scale_signal: float = 1.0
    shape_length: float = 2.0
    scale_length: float = 0.5
    shape_noise: float = 2.0
    scale_noise: float = 0.1
    pinned: KernelHyperparams | None = None

    def __post_init__(self):
        for name in ("shape_signal", "shape_length", "shape_noise"):
            if not getattr(self, name) > 1.0:
                raise InputError(f"{name} must exceed 1 so the prior mean is finite")
        for name in ("scale_signal", "scale_length", "scale_noise"):
            if not getattr(self, name) > 0.0:
                raise InputError(f"{name} must be positive")

    @classmethod
    def calibrated(cls, dim: int, output_variance: float = 1.0) -> "BaseMeasure":
        """Scales set from the data: prior means equal the output variance,
        a tenth of it for noise, and a quarter of the [-1, 1]^d diameter for
        the length scale (InvGamma(2, b) has mean b)."""
        if dim < 1:
            raise InputError("dimension must be >= 1")
        b_f = float(output_variance)
        return cls(
            shape_signal=2.0,
            scale_signal=b_f,
            shape_length=2.0,
            scale_length=math.sqrt(dim) * 2.0 / 4.0,
            shape_noise=2.0,
            scale_noise=0.1 * b_f,
        )

    @classmethod
    def point_mass(cls, theta: KernelHyperparams) -> "BaseMeasure":
        return cls(pinned=theta)

    @property
    def shapes(self) -> np.ndarray:
        return np.array([self.shape_signal, self.shape_length, self.shape_noise])

    @property
    def scales(self) -> np.ndarray:
        return np.array([self.scale_signal, self.scale_length, self.scale_noise])

    def prior_mean(self) -> KernelHyperparams:
        if self.pinned is not None:
            return self.pinned
        m = self.scales / (self.shapes - 1.0)
        return KernelHyperparams.from_values(*m)

    def sample_values(self, m: int, rng: np.random.Generator) -> np.ndarray:
        """``m`` draws as an (m, 3) array of positive values."""
        if self.pinned is not None:
            return np.tile(self.pinned.values, (m, 1))
        gam = rng.gamma(self.shapes, 1.0 / self.scales, size=(m, 3))
        return 1.0 / gam

    def log_density(self, log_params: np.ndarray) -> float:
        """Log prior density of the log-parameters (Inverse-Gamma plus the
        log-transform Jacobian). Flat for a pinned measure."""
        if self.pinned is not None:
            return 0.0
        a, b = self.shapes, self.scales
        u = np.asarray(log_params, dtype=float)
        # log InvGamma(e^u) + u  ==  a log b - lgamma(a) - a u - b e^{-u}
        lg = np.array([math.lgamma(v) for v in a])
        return float(np.sum(a * np.log(b) - lg - a * u - b * np.exp(-u)))


def sample_base_measure(g0: BaseMeasure, rng: np.random.Generator) -> KernelHyperparams:
    """One hyperparameter triple drawn from ``g0``."""
    return KernelHyperparams.from_values(*g0.sample_values(1, rng)[0])
