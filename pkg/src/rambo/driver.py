"""The optimization loop, run configuration, initial designs and trace files.

One loop serves both the mixture model and the single-GP baseline; they
differ only in how the surrogate state is refreshed each iteration. Random
streams are split per concern from the run seed, so two runs that share a
seed see the same initial hyperparameters and acquisition draws.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.stats import qmc

from . import __version__
from .acquisition import (
    ACQUISITIONS,
    AcquisitionContext,
    ei_mixture,
    mes_mixture,
    pi_mixture,
    sample_max_values,
    thompson_sample,
    ucb_mixture,
)
from .dpmm import (
    HYPER_UPDATES,
    GibbsConfig,
    RegimeState,
    add_observation,
    alpha_schedule,
    initial_state,
    prune_regimes,
    refresh,
    run_gibbs,
    single_regime_state,
)
from .errors import InputError, NumericalError, TraceIOError
from .gp import KernelHyperparams, ObservationSet, _adam
from .objectives import OBJECTIVES, ObjectiveSpec, get_objective
from .optimizer import maximize, start_points
from .predictive import mixture_predict_batch
from .prior import BaseMeasure, sample_base_measure

OUTPUT_DIR_ENV = "RAMBO_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "rambo_runs"
STD_FLOOR = 1e-8
SOBOL_MAX_DIM = 21201
STREAMS = ("partition", "theta", "gibbs", "acquisition", "noise")
# Stand-in for alpha -> 0 in the degenerate single-regime model.
DEGENERATE_ALPHA = 1e-300

_RECOVERABLE = (NumericalError, np.linalg.LinAlgError, FloatingPointError)


def _default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Everything that determines a run. ``(config, seed)`` fixes every output file.

    ``fixed_alpha`` is the concentration used when ``schedule`` is off
    (defaults to ``alpha0``). ``record_timing`` controls whether the trace's
    ``ms`` column holds wall-clock times or zeros; zeros keep files
    byte-reproducible.
    """

    objective: str = "levy"
    dim: int = 2
    budget: int = 80
    init_count: int = 20
    alpha0: float = 0.2
    schedule: bool = True
    fixed_alpha: float | None = None
    burn_in: int = 500
    sweeps: int = 50
    acquisition: str = "ei"
    xi: float = 0.01
    ucb_beta: float = 2.0
    mes_samples: int = 10
    rff_features: int = 512
    restarts: int = 20
    prune_floor: float = 1e-3
    mc_samples: int = 16
    hyper_update: str = "adam"
    adam_steps: int = 100
    learning_rate: float = 0.05
    patience: int = 20
    noise_std: float = 0.0
    seed: int = 0
    record_timing: bool = False
    output_dir: str = field(default_factory=_default_output_dir)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise InputError(f"unknown objective {self.objective!r}; valid: {', '.join(OBJECTIVES)}")
        if self.acquisition not in ACQUISITIONS:
            raise InputError(f"unknown acquisition {self.acquisition!r}; valid: {', '.join(ACQUISITIONS)}")
        if self.hyper_update not in HYPER_UPDATES:
            raise InputError(f"hyper_update must be one of {', '.join(HYPER_UPDATES)}")
        if not self.init_count >= 2:
            raise InputError("init_count must be >= 2")
        if not self.budget > self.init_count:
            raise InputError("budget must exceed init_count")
        for name in ("dim", "burn_in", "sweeps", "mes_samples", "rff_features", "restarts",
                     "mc_samples", "adam_steps", "patience"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"{name} must be >= 1")
        if not 0.0 <= self.prune_floor < 0.5:
            raise InputError("prune_floor must lie in [0, 0.5)")
        if not self.alpha0 > 0:
            raise InputError("alpha0 must be positive")
        if self.fixed_alpha is not None and not self.fixed_alpha > 0:
            raise InputError("fixed_alpha must be positive")
        if self.xi < 0 or self.ucb_beta < 0 or self.noise_std < 0 or not self.learning_rate > 0:
            raise InputError("xi, ucb_beta, noise_std must be >= 0 and learning_rate > 0")
        if self.seed < 0:
            raise InputError("seed must be nonnegative")
        get_objective(self.objective, self.dim)

    def alpha_at(self, t: int) -> float:
        if self.schedule:
            return alpha_schedule(t, self.alpha0)
        return self.fixed_alpha if self.fixed_alpha is not None else self.alpha0

    def gibbs_config(self) -> GibbsConfig:
        return GibbsConfig(mc_samples=self.mc_samples, hyper_update=self.hyper_update,
                           adam_steps=self.adam_steps, learning_rate=self.learning_rate,
                           patience=self.patience)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_mapping(cls, values: dict[str, Any]) -> "RunConfig":
        unknown = sorted(set(values) - set(cls.field_names()))
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        clean = {}
        for k, v in values.items():
            clean[k] = _coerce(k, v, types[k])
        return cls(**clean)

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        """Load a flat TOML table; non-None ``overrides`` win over file values."""
        p = Path(path)
        if not p.is_file():
            raise InputError(f"config file not found: {p}")
        try:
            with p.open("rb") as fh:
                values = _toml.load(fh)
        except _toml.TOMLDecodeError as exc:
            raise InputError(f"{p}: {exc}") from None
        nested = [k for k, v in values.items() if isinstance(v, dict)]
        if nested:
            raise InputError(f"{p}: config must be flat; found tables {nested}")
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)


try:  # Python >= 3.11
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover
    import tomli as _toml


def _coerce(name: str, value, typ: str):
    base = typ.replace(" | None", "")
    if value is None:
        if "None" in typ:
            return None
        raise InputError(f"{name} may not be null")
    try:
        if base == "bool":
            if isinstance(value, str):
                low = value.strip().lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return low in ("true", "1", "yes")
            return bool(value)
        if base == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if base == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise InputError(f"{name}: cannot interpret {value!r} as {base}") from None


# ---------------------------------------------------------------------------
# Initial design and normalization
# ---------------------------------------------------------------------------


def _unit_design(d: int, n: int, seed: int) -> tuple[np.ndarray, str]:
    if n < 1:
        raise InputError("n must be >= 1")
    if d <= SOBOL_MAX_DIM:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return qmc.Sobol(d, scramble=False).random(n), "sobol"
    return qmc.LatinHypercube(d, seed=np.random.default_rng(seed)).random(n), "lhs"


def _scale(U: np.ndarray, bounds) -> np.ndarray:
    b = np.atleast_2d(np.asarray(bounds, dtype=float))
    return b[:, 0] + U * (b[:, 1] - b[:, 0])


def initial_design(d: int, n: int, bounds, seed: int = 0) -> tuple[np.ndarray, str]:
    """Initial points and the method used (``"sobol"`` or the ``"lhs"`` fallback)."""
    U, method = _unit_design(d, n, seed)
    return _scale(U, bounds), method


def sobol_init(d: int, n: int, bounds, seed: int = 0) -> np.ndarray:
    """First ``n`` points of the unscrambled Sobol sequence scaled into ``bounds``.

    The seed only matters when ``d`` is beyond the direction-number tables,
    in which case a seeded Latin hypercube is returned instead.
    """
    return initial_design(d, n, bounds, seed)[0]


@dataclass(frozen=True)
class Transform:
    """Affine maps between raw and model coordinates.

    Inputs go to [-1, 1]^d; outputs are centred and divided by the population
    standard deviation (floored at 1e-8).
    """

    lower: np.ndarray
    upper: np.ndarray
    y_mean: float
    y_std: float

    def to_unit(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return 2.0 * (X - self.lower) / (self.upper - self.lower) - 1.0

    def from_unit(self, U) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        return self.lower + (U + 1.0) * 0.5 * (self.upper - self.lower)

    def standardize(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def destandardize(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.y_std + self.y_mean


def normalize(data: ObservationSet) -> tuple[ObservationSet, Transform]:
    if len(data) == 0:
        raise InputError("cannot normalize an empty data set")
    b = data.bounds
    y = data.outputs
    tf = Transform(b[:, 0].copy(), b[:, 1].copy(), float(np.mean(y)), max(float(np.std(y)), STD_FLOOR))
    U = np.clip(tf.to_unit(data.inputs), -1.0, 1.0)
    return ObservationSet(U, tf.standardize(y)), tf


def invert(data: ObservationSet, tf: Transform) -> ObservationSet:
    """Undo :func:`normalize`."""
    bounds = np.stack([tf.lower, tf.upper], axis=1)
    return ObservationSet(tf.from_unit(data.inputs), tf.destandardize(data.outputs), bounds)


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


@dataclass
class IterationRecord:
    t: int
    x: np.ndarray
    y: float
    best: float
    alpha: float
    regimes: int
    ms: float
    phase: str = "bo"
    fallback: bool = False


@dataclass
class RunTrace:
    method: str
    objective: str
    direction: str
    dim: int
    records: list[IterationRecord] = field(default_factory=list)
    config: dict[str, Any] = field(default_factory=dict)
    init_design: str = "sobol"
    record_timing: bool = False

    def __len__(self) -> int:
        return len(self.records)

    @property
    def best_values(self) -> np.ndarray:
        return np.array([r.best for r in self.records])

    @property
    def queries(self) -> np.ndarray:
        return np.array([r.x for r in self.records])

    @property
    def fallback_iterations(self) -> list[int]:
        return [r.t for r in self.records if r.fallback]

    def summary(self) -> dict[str, Any]:
        ys = np.array([r.y for r in self.records])
        k = int(np.argmin(ys) if self.direction == "minimize" else np.argmax(ys))
        return {
            "best_x": [float(v) for v in self.records[k].x],
            "best_y": float(ys[k]),
            "evaluations": len(self.records),
        }


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trace(trace: RunTrace, directory) -> dict[str, Path]:
    """Write ``trace.csv``, ``summary.json`` and ``convergence.csv`` into ``directory``."""
    out = Path(directory)
    paths = {name: out / name for name in ("trace.csv", "summary.json", "convergence.csv")}
    header = ["t"] + [f"x_{j + 1}" for j in range(trace.dim)] + ["y", "best", "alpha", "regimes", "ms"]
    current = paths["trace.csv"]
    try:
        out.mkdir(parents=True, exist_ok=True)
        with current.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in trace.records:
                ms = f"{r.ms:.3f}" if trace.record_timing else "0"
                w.writerow([r.t, *map(_fmt, r.x), _fmt(r.y), _fmt(r.best), _fmt(r.alpha), r.regimes, ms])
        current = paths["convergence.csv"]
        with current.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "best"])
            for r in trace.records:
                w.writerow([r.t, _fmt(r.best)])
        current = paths["summary.json"]
        doc = {
            "version": __version__,
            "method": trace.method,
            "objective": trace.objective,
            "direction": trace.direction,
            "dim": trace.dim,
            "config": trace.config,
            "summary": trace.summary(),
            "init_design": trace.init_design,
            "fallback_iterations": trace.fallback_iterations,
        }
        current.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise TraceIOError(f"cannot write {current}: {exc.strerror or exc}") from exc
    return paths


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Columns of a ``trace.csv`` as float arrays keyed by header name."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = list(zip(*body)) if body else [()] * len(header)
    return {h: np.array([float(v) for v in c]) for h, c in zip(header, cols)}


# ---------------------------------------------------------------------------
# Surrogate updates
# ---------------------------------------------------------------------------


class _MixtureSurrogate:
    """DP mixture state carried between iterations."""

    kind = "rambo"

    def __init__(self, cfg: RunConfig, g0: BaseMeasure, streams: dict):
        self.cfg, self.g0, self.streams = cfg, g0, streams
        self.gcfg = cfg.gibbs_config()
        self.state: RegimeState | None = None

    def fit(self, data: ObservationSet, alpha: float) -> RegimeState:
        s = self.streams
        if self.state is None:
            st = initial_state(data, alpha, self.g0, s["partition"], s["theta"])
            sweeps = self.cfg.burn_in
        else:
            st = self.state.copy()
            st.alpha = alpha
            st = refresh(st, data)
            for j in range(st.assignments.shape[0], len(data)):
                st = add_observation(st, data.subset(np.arange(j + 1)), self.g0, s["gibbs"], self.gcfg)
            sweeps = self.cfg.sweeps
        st, _ = run_gibbs(st, data, self.g0, sweeps, s["gibbs"], self.gcfg)
        self.state = st
        return st

    def carry(self, data: ObservationSet) -> None:
        if self.state is not None:
            self.state = prune_regimes(self.state, data, self.cfg.prune_floor)


class _SingleSurrogate:
    """One GP over all data, refit by the same Adam rounds a one-regime sweep performs."""

    kind = "single_gp"

    def __init__(self, cfg: RunConfig, g0: BaseMeasure, streams: dict):
        self.cfg, self.g0, self.streams = cfg, g0, streams
        self.theta: KernelHyperparams | None = None
        self.state: RegimeState | None = None

    def fit(self, data: ObservationSet, alpha: float) -> RegimeState:
        cfg = self.cfg
        if self.theta is None:
            self.theta = sample_base_measure(self.g0, self.streams["theta"])
            rounds = cfg.burn_in
        else:
            rounds = cfg.sweeps
        theta = self.theta
        if cfg.hyper_update == "adam":
            for _ in range(rounds):
                try:
                    u, _ = _adam(data.inputs, data.outputs, theta.log_array, cfg.adam_steps,
                                 cfg.learning_rate, cfg.patience)
                except NumericalError:
                    continue
                theta = KernelHyperparams.from_log(u)
        self.theta = theta
        self.state = single_regime_state(data, theta, alpha)
        return self.state

    def carry(self, data: ObservationSet) -> None:
        pass


# ---------------------------------------------------------------------------
# Acquisition step
# ---------------------------------------------------------------------------


def _score_fn(cfg: RunConfig, state: RegimeState, ctx: AcquisitionContext, rng, bounds):
    name = cfg.acquisition
    if name == "mes":
        ys = sample_max_values(state, bounds, cfg.mes_samples, rng, ctx.f_plus)
        return lambda X: mes_mixture(mixture_predict_batch(state, X), ys, ctx)
    score = {"ei": ei_mixture, "pi": pi_mixture, "ucb": ucb_mixture}[name]
    return lambda X: score(mixture_predict_batch(state, X), ctx)


def _propose(cfg, state, data, g0, rng, incumbent_x) -> tuple[np.ndarray, bool]:
    d = data.dim
    bounds = np.tile([-1.0, 1.0], (d, 1))
    ctx = AcquisitionContext(float(np.max(data.outputs)), cfg.xi, cfg.ucb_beta,
                             cfg.mes_samples, cfg.rff_features)
    if cfg.acquisition == "ts":
        return thompson_sample(state, bounds, ctx, rng, g0, cfg.restarts, incumbent_x,
                               avoid=data.inputs), False
    fn = _score_fn(cfg, state, ctx, rng, bounds)
    res = maximize(fn, bounds, cfg.restarts, state, incumbent_x, rng, avoid=data.inputs)
    return res.x, res.fallback


def _fallback_query(cfg, state, data, rng, incumbent_x) -> np.ndarray:
    """Best of the random start set under whatever model is available."""
    d = data.dim
    bounds = np.tile([-1.0, 1.0], (d, 1))
    S = start_points(bounds, cfg.restarts, None, incumbent_x, rng)
    if state is None or cfg.acquisition == "ts":
        return S[0]
    try:
        ctx = AcquisitionContext(float(np.max(data.outputs)), cfg.xi, cfg.ucb_beta,
                                 cfg.mes_samples, cfg.rff_features)
        v = np.asarray(_score_fn(cfg, state, ctx, rng, bounds)(S), dtype=float)
        v = np.where(np.isfinite(v), v, -np.inf)
        return S[int(np.argmax(v))]
    except (*_RECOVERABLE, ValueError):
        return S[0]


# ---------------------------------------------------------------------------
# The loop
# ---------------------------------------------------------------------------


def make_streams(seed) -> dict[str, np.random.Generator]:
    """Independent generators per concern, derived from ``seed``.

    ``seed`` may be an int, a SeedSequence or a Generator; a Generator is
    reduced to its originating seed sequence so equal seeds give equal streams.
    """
    if isinstance(seed, np.random.Generator):
        seed = seed.bit_generator.seed_seq
    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    else:
        ss = np.random.SeedSequence(int(seed))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, ss.spawn(len(STREAMS)))}


def _evaluate(objective: ObjectiveSpec, x: np.ndarray, cfg: RunConfig, rng) -> float:
    y = float(objective(x))
    if cfg.noise_std > 0:
        y += cfg.noise_std * float(rng.standard_normal())
    return y


def optimize(objective: ObjectiveSpec, cfg: RunConfig, surrogate: str = "rambo", seed=None) -> RunTrace:
    """Run the BO loop on ``objective`` with the given surrogate (``rambo`` or ``single_gp``)."""
    if objective.dim != cfg.dim:
        raise InputError(f"objective has dimension {objective.dim}, config says {cfg.dim}")
    streams = make_streams(cfg.seed if seed is None else seed)
    g0 = BaseMeasure.calibrated(objective.dim)
    model = (_MixtureSurrogate if surrogate == "rambo" else _SingleSurrogate)(cfg, g0, streams)
    sign = objective.sign
    bounds = objective.bounds
    trace = RunTrace(method=model.kind, objective=objective.name, direction=objective.direction,
                     dim=objective.dim, config=cfg.to_dict(), record_timing=cfg.record_timing)

    def alpha_col(t: int) -> float:
        return cfg.alpha_at(t) if model.kind == "rambo" else 0.0

    X0, trace.init_design = initial_design(objective.dim, cfg.init_count, bounds, cfg.seed)
    X_raw: list[np.ndarray] = []
    y_raw: list[float] = []
    best = math.nan
    for x in X0:
        t0 = time.perf_counter()
        y = _evaluate(objective, x, cfg, streams["noise"])
        X_raw.append(x)
        y_raw.append(y)
        best = y if not math.isfinite(best) or objective.better(y, best) else best
        trace.records.append(IterationRecord(len(y_raw), x.copy(), y, best, alpha_col(len(y_raw)), 1,
                                             (time.perf_counter() - t0) * 1e3, phase="init"))

    while len(y_raw) < cfg.budget:
        t = len(y_raw) + 1
        t0 = time.perf_counter()
        alpha = cfg.alpha_at(t) if model.kind == "rambo" else DEGENERATE_ALPHA
        raw = ObservationSet(np.array(X_raw), sign * np.array(y_raw), bounds)
        data, tf = normalize(raw)
        incumbent = data.inputs[int(np.argmax(data.outputs))]
        state = None
        failed = False
        try:
            state = model.fit(data, alpha)
            u, failed = _propose(cfg, state, data, g0, streams["acquisition"], incumbent)
        except _RECOVERABLE:
            failed = True
            u = _fallback_query(cfg, state, data, streams["acquisition"], incumbent)
        x = np.clip(tf.from_unit(u), bounds[:, 0], bounds[:, 1])
        y = _evaluate(objective, x, cfg, streams["noise"])
        regimes = state.n_regimes if state is not None else 1
        try:
            model.carry(data)
        except _RECOVERABLE:
            failed = True
        X_raw.append(x)
        y_raw.append(y)
        if objective.better(y, best):
            best = y
        trace.records.append(IterationRecord(t, x, y, best, alpha_col(t), regimes,
                                             (time.perf_counter() - t0) * 1e3, fallback=failed))
    return trace


def run_rambo(config: RunConfig) -> RunTrace:
    """Full mixture-model BO run described by ``config``."""
    config.validate()
    return optimize(get_objective(config.objective, config.dim), config, "rambo")


__all__ = [
    "DEGENERATE_ALPHA",
    "IterationRecord",
    "RunConfig",
    "RunTrace",
    "Transform",
    "initial_design",
    "invert",
    "make_streams",
    "normalize",
    "optimize",
    "read_trace_csv",
    "run_rambo",
    "sobol_init",
    "write_trace",
]
