"""Command-line entry point: ``rambo run|sweep|bench|list``.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags, unknown
names, missing or malformed config).
"""

from __future__ import annotations

import csv
import math
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from .acquisition import ACQUISITIONS
from .baselines import random_search, single_gp_bo
from .driver import RunConfig, RunTrace, run_rambo, write_trace
from .errors import InputError
from .objectives import OBJECTIVES, get_objective

EXIT_RUNTIME = 1
EXIT_USAGE = 2

_OVERRIDES = [
    click.option("--objective", type=str, default=None, help="Objective name (see `rambo list`)."),
    click.option("--dim", type=int, default=None),
    click.option("--budget", type=int, default=None, help="Total evaluations including the initial design."),
    click.option("--init-count", type=int, default=None),
    click.option("--alpha0", type=float, default=None),
    click.option("--schedule/--no-schedule", default=None, help="Log-sqrt concentration schedule."),
    click.option("--fixed-alpha", type=float, default=None),
    click.option("--burn-in", type=int, default=None),
    click.option("--sweeps", type=int, default=None),
    click.option("--acquisition", type=str, default=None),
    click.option("--restarts", type=int, default=None),
    click.option("--prune-floor", type=float, default=None),
    click.option("--mc-samples", type=int, default=None),
    click.option("--seed", type=int, default=None),
    click.option("--record-timing/--no-record-timing", default=None),
    click.option("--output-dir", type=click.Path(file_okay=False), default=None),
]


def _with_overrides(fn):
    for opt in reversed(_OVERRIDES):
        fn = opt(fn)
    return fn


def _build_config(config_path, overrides: dict) -> RunConfig:
    if config_path is not None:
        return RunConfig.from_file(config_path, **overrides)
    return RunConfig.from_mapping({k: v for k, v in overrides.items() if v is not None})


def _usage(msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(EXIT_USAGE)


def _config_or_exit(config_path, overrides) -> RunConfig:
    try:
        return _build_config(config_path, overrides)
    except InputError as exc:
        _usage(str(exc))


def _commit(trace: RunTrace, target: Path) -> None:
    """Write into a scratch directory, then move into place, so failures leave nothing behind."""
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=target.parent))
    try:
        write_trace(trace, tmp)
        if target.exists():
            shutil.rmtree(target)
        tmp.rename(target)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)


def _seed_config(cfg: RunConfig, seed: int) -> RunConfig:
    return cfg.replace(seed=seed)


def _run_one(args) -> tuple[int, list[float], str]:
    cfg, seed, target = args
    c = _seed_config(cfg, seed)
    trace = run_rambo(c)
    _commit(trace, Path(target))
    return seed, trace.best_values.tolist(), target


def _median_se(values: np.ndarray) -> tuple[float, float]:
    med = float(np.median(values))
    se = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return med, se


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(version=__version__, prog_name="rambo")
def cli():
    """Regime-adaptive Bayesian optimization."""


@cli.command("list")
def list_cmd():
    """Show available objectives and acquisition functions."""
    click.echo("objectives:")
    for name in OBJECTIVES:
        click.echo(f"  {name}")
    click.echo("acquisitions:")
    for name in ACQUISITIONS:
        click.echo(f"  {name}")


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Flat TOML file with RunConfig fields.")
@_with_overrides
def run(config_path, **overrides):
    """Single run; writes trace.csv, summary.json and convergence.csv."""
    cfg = _config_or_exit(config_path, overrides)
    target = Path(cfg.output_dir)
    try:
        trace = run_rambo(cfg)
        _commit(trace, target)
    except InputError as exc:
        _usage(str(exc))
    except Exception as exc:  # noqa: BLE001 - surfaced as a diagnostic
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    s = trace.summary()
    click.echo(f"best {s['best_y']!r} at {s['best_x']} after {s['evaluations']} evaluations -> {target}")


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--seeds", type=int, default=5, show_default=True, help="Number of seeds, starting at --seed.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker processes.")
@_with_overrides
def sweep(config_path, seeds, jobs, **overrides):
    """Multi-seed runs plus aggregate.csv (median and standard error per iteration)."""
    if seeds < 1 or jobs < 1:
        _usage("--seeds and --jobs must be >= 1")
    cfg = _config_or_exit(config_path, overrides)
    root = Path(cfg.output_dir)
    tasks = [(cfg, cfg.seed + k, str(root / f"seed_{cfg.seed + k:04d}")) for k in range(seeds)]
    try:
        if jobs == 1:
            results = [_run_one(t) for t in tasks]
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_run_one, tasks))
    except InputError as exc:
        _usage(str(exc))
    except Exception as exc:  # noqa: BLE001
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    curves = np.array([r[1] for r in results])
    path = root / "aggregate.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "median", "se", "n_seeds"])
        for t in range(curves.shape[1]):
            med, se = _median_se(curves[:, t])
            w.writerow([t + 1, repr(med), repr(se), curves.shape[0]])
    med, se = _median_se(curves[:, -1])
    click.echo(f"{seeds} seeds -> {root}; final best median {med:.6g} (se {se:.3g})")


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)
@click.option("--seeds", type=int, default=5, show_default=True)
@_with_overrides
def bench(config_path, seeds, **overrides):
    """RAMBO against single-GP BO and random search on paired seeds."""
    if seeds < 1:
        _usage("--seeds must be >= 1")
    cfg = _config_or_exit(config_path, overrides)
    root = Path(cfg.output_dir)
    obj = get_objective(cfg.objective, cfg.dim)
    finals: dict[str, list[float]] = {"rambo": [], "single_gp": [], "random_search": []}
    try:
        for k in range(seeds):
            seed = cfg.seed + k
            c = _seed_config(cfg, seed)
            runs = {
                "rambo": run_rambo(c),
                "single_gp": single_gp_bo(obj, c.budget, c.init_count, seed, config=c),
                "random_search": random_search(obj, c.budget, np.random.default_rng(seed)),
            }
            for method, trace in runs.items():
                _commit(trace, root / method / f"seed_{seed:04d}")
                finals[method].append(trace.best_values[-1])
    except InputError as exc:
        _usage(str(exc))
    except Exception as exc:  # noqa: BLE001
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    rows = []
    for method, vals in finals.items():
        med, se = _median_se(np.array(vals))
        rows.append((method, med, se, len(vals)))
    with (root / "bench.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "median_final_best", "se", "n_seeds"])
        for m, med, se, n in rows:
            w.writerow([m, repr(med), repr(se), n])
    click.echo(f"{cfg.objective} d={cfg.dim} budget={cfg.budget} ({obj.direction})")
    click.echo(f"{'method':<15}{'median best':>16}{'se':>12}")
    for m, med, se, _ in rows:
        click.echo(f"{m:<15}{med:>16.6g}{se:>12.3g}")


def main(argv=None) -> int:
    """Run the CLI and return its exit code."""
    try:
        cli.main(args=argv, prog_name="rambo", standalone_mode=False)
    except click.exceptions.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_RUNTIME
    except SystemExit as exc:
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
