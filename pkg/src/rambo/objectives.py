"""Synthetic objectives and the name registry used by the CLI."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import sindg

from .errors import InputError

SCHWEFEL_CONSTANT = 418.9829

# Piecewise fixture: breakpoints and segment shapes.
PIECEWISE_BREAKS = (-0.3, 0.3)
PIECEWISE_BAND_LEVEL = 2.0
PIECEWISE_BAND_AMPLITUDE = 0.4
PIECEWISE_BAND_FREQUENCY = 25.0
PIECEWISE_SHELF_LEVEL = -1.0


def _sin_pi(w):
    # sin(pi * w) through degrees so integer w gives an exact zero
    return sindg(180.0 * np.asarray(w, dtype=float))


def _check_box(x: np.ndarray, lo: float, hi: float, name: str) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or x.size == 0:
        raise InputError(f"{name} expects a non-empty 1-D point")
    if np.any(x < lo) or np.any(x > hi) or not np.all(np.isfinite(x)):
        raise InputError(f"{name} is defined on [{lo}, {hi}]^d; got {x}")
    return x


def levy(x) -> float:
    """Levy function on [-10, 10]^d; minimum 0 at (1, ..., 1)."""
    x = _check_box(x, -10.0, 10.0, "levy")
    w = 1.0 + (x - 1.0) / 4.0
    head = _sin_pi(w[0]) ** 2
    mid = np.sum((w[:-1] - 1.0) ** 2 * (1.0 + 10.0 * np.sin(np.pi * w[:-1] + 1.0) ** 2))
    tail = (w[-1] - 1.0) ** 2 * (1.0 + _sin_pi(2.0 * w[-1]) ** 2)
    return float(head + mid + tail)


def schwefel(x) -> float:
    """Schwefel function on [-500, 500]^d."""
    x = _check_box(x, -500.0, 500.0, "schwefel")
    return float(SCHWEFEL_CONSTANT * x.size - np.sum(x * np.sin(np.sqrt(np.abs(x)))))


def piecewise_regime_1d(x) -> float:
    """Three-regime test function on [-1, 1].

    * x < -0.3: slow sinusoid ``0.5 sin(3x)``
    * -0.3 <= x < 0.3: high-frequency band ``2 + 0.4 sin(25x)``
    * x >= 0.3: flat shelf at -1

    Both breakpoints have a jump in level and in slope.
    """
    v = _check_box(x, -1.0, 1.0, "piecewise_regime_1d")
    if v.size != 1:
        raise InputError("piecewise_regime_1d is one-dimensional")
    t = float(v[0])
    if t < PIECEWISE_BREAKS[0]:
        return 0.5 * math.sin(3.0 * t)
    if t < PIECEWISE_BREAKS[1]:
        return PIECEWISE_BAND_LEVEL + PIECEWISE_BAND_AMPLITUDE * math.sin(PIECEWISE_BAND_FREQUENCY * t)
    return PIECEWISE_SHELF_LEVEL


def piecewise_segment(x) -> int:
    """Segment label (0, 1, 2) of a point of the piecewise fixture."""
    t = float(np.atleast_1d(x)[0])
    return 0 if t < PIECEWISE_BREAKS[0] else (1 if t < PIECEWISE_BREAKS[1] else 2)


@dataclass(frozen=True)
class ObjectiveSpec:
    name: str
    dim: int
    bounds: np.ndarray
    direction: str
    evaluator: Callable[[np.ndarray], float]
    known_optimum: tuple[np.ndarray, float] | None = None

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        if b.shape != (self.dim, 2) or np.any(b[:, 0] >= b[:, 1]):
            raise InputError("bounds must be (dim, 2) with lo < hi")
        if self.direction not in ("minimize", "maximize"):
            raise InputError("direction must be 'minimize' or 'maximize'")
        object.__setattr__(self, "bounds", b)

    def __call__(self, x) -> float:
        return self.evaluator(np.asarray(x, dtype=float))

    @property
    def sign(self) -> float:
        """Multiplier mapping objective values into the engine's maximization frame."""
        return -1.0 if self.direction == "minimize" else 1.0

    def better(self, a: float, b: float) -> bool:
        return a < b if self.direction == "minimize" else a > b


def _levy_spec(dim: int) -> ObjectiveSpec:
    return ObjectiveSpec("levy", dim, np.tile([-10.0, 10.0], (dim, 1)), "minimize", levy,
                         (np.ones(dim), 0.0))


def _schwefel_spec(dim: int) -> ObjectiveSpec:
    return ObjectiveSpec("schwefel", dim, np.tile([-500.0, 500.0], (dim, 1)), "minimize", schwefel)


def _piecewise_spec(dim: int) -> ObjectiveSpec:
    if dim != 1:
        raise InputError("piecewise_regime_1d only exists in dimension 1")
    x_opt = math.pi / (2.0 * PIECEWISE_BAND_FREQUENCY)
    return ObjectiveSpec("piecewise_regime_1d", 1, np.array([[-1.0, 1.0]]), "maximize",
                         piecewise_regime_1d,
                         (np.array([x_opt]), PIECEWISE_BAND_LEVEL + PIECEWISE_BAND_AMPLITUDE))


OBJECTIVES: dict[str, Callable[[int], ObjectiveSpec]] = {
    "levy": _levy_spec,
    "schwefel": _schwefel_spec,
    "piecewise_regime_1d": _piecewise_spec,
}


def get_objective(name: str, dim: int) -> ObjectiveSpec:
    try:
        factory = OBJECTIVES[name]
    except KeyError:
        raise InputError(f"unknown objective {name!r}; valid: {', '.join(OBJECTIVES)}") from None
    if dim < 1:
        raise InputError("dimension must be >= 1")
    return factory(dim)
