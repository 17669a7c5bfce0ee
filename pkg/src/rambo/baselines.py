"""Reference optimizers sharing the trace format of the main loop."""

from __future__ import annotations

import time

import numpy as np

from .driver import IterationRecord, RunConfig, RunTrace, optimize
from .errors import InputError
from .objectives import ObjectiveSpec


def random_search(objective: ObjectiveSpec, budget: int, rng: np.random.Generator) -> RunTrace:
    """Uniform sampling in the objective's box."""
    if budget < 1:
        raise InputError("budget must be >= 1")
    lo, hi = objective.bounds[:, 0], objective.bounds[:, 1]
    trace = RunTrace("random_search", objective.name, objective.direction, objective.dim,
                     config={"budget": budget}, init_design="uniform")
    best = None
    for t in range(1, budget + 1):
        t0 = time.perf_counter()
        x = lo + rng.random(objective.dim) * (hi - lo)
        y = float(objective(x))
        if best is None or objective.better(y, best):
            best = y
        trace.records.append(IterationRecord(t, x, y, best, 0.0, 1, (time.perf_counter() - t0) * 1e3,
                                             phase="random"))
    return trace


def single_gp_bo(
    objective: ObjectiveSpec,
    budget: int,
    init_count: int,
    rng,
    config: RunConfig | None = None,
) -> RunTrace:
    """Standard BO with one SE-kernel GP and the configured acquisition.

    Runs the same loop as the mixture model: Sobol initial design,
    re-standardization every iteration, Adam refits (``burn_in`` rounds on
    the first fit, ``sweeps`` rounds afterwards) and the same multi-start
    acquisition optimizer. ``rng`` may be a seed, a SeedSequence or a
    Generator; equal seeds reproduce the mixture run's random streams.
    """
    if not budget >= init_count >= 2:
        raise InputError("need budget >= init_count >= 2")
    if config is None:
        config = RunConfig(objective=objective.name, dim=objective.dim, budget=max(budget, init_count + 1),
                           init_count=init_count)
    cfg = config.replace(budget=max(budget, init_count + 1), init_count=init_count)
    trace = optimize(objective, cfg, "single_gp", seed=rng)
    trace.records = trace.records[:budget]
    return trace
