import numpy as np
import pytest

from rambo.baselines import random_search, single_gp_bo
from rambo.driver import RunConfig, run_rambo
from rambo.errors import InputError
from rambo.objectives import ObjectiveSpec, get_objective


def quick(**kw):
    base = dict(objective="levy", dim=2, budget=12, init_count=8, burn_in=5, sweeps=2,
                adam_steps=15, restarts=4, mc_samples=4, output_dir="unused")
    base.update(kw)
    return RunConfig(**base)


def test_random_search_budget_one():
    tr = random_search(get_objective("levy", 2), 1, np.random.default_rng(0))
    assert len(tr) == 1 and tr.best_values[0] == tr.records[0].y


def test_random_search_monotone_and_in_bounds():
    obj = get_objective("schwefel", 3)
    tr = random_search(obj, 200, np.random.default_rng(1))
    assert np.all(np.diff(tr.best_values) <= 0)
    assert np.all(np.abs(tr.queries) <= 500)


def test_random_search_reproducible():
    obj = get_objective("levy", 2)
    a = random_search(obj, 30, np.random.default_rng(5))
    b = random_search(obj, 30, np.random.default_rng(5))
    np.testing.assert_array_equal(a.queries, b.queries)
    with pytest.raises(InputError):
        random_search(obj, 0, np.random.default_rng(0))


def test_single_gp_schema_matches_rambo():
    cfg = quick()
    obj = get_objective("levy", 2)
    s = single_gp_bo(obj, cfg.budget, cfg.init_count, 0, config=cfg)
    r = run_rambo(cfg)
    assert len(s) == len(r) == cfg.budget
    assert s.records[0].__dataclass_fields__.keys() == r.records[0].__dataclass_fields__.keys()
    assert s.method == "single_gp" and all(rec.regimes == 1 and rec.alpha == 0.0 for rec in s.records)
    np.testing.assert_array_equal(s.queries[:cfg.init_count], r.queries[:cfg.init_count])
    assert np.all(np.diff(s.best_values) <= 0)


def test_single_gp_preconditions():
    obj = get_objective("levy", 2)
    with pytest.raises(InputError):
        single_gp_bo(obj, 5, 1, 0)
    with pytest.raises(InputError):
        single_gp_bo(obj, 4, 5, 0)


def test_single_gp_budget_equal_init_count():
    obj = get_objective("levy", 2)
    tr = single_gp_bo(obj, 6, 6, 0, config=quick())
    assert len(tr) == 6 and all(r.phase == "init" for r in tr.records)


def _gp_sample_objective(seed=0):
    rng = np.random.default_rng(seed)
    grid = np.linspace(-1, 1, 400)
    K = np.exp(-0.5 * (grid[:, None] - grid[None, :]) ** 2 / 0.15**2) + 1e-8 * np.eye(400)
    f = np.linalg.cholesky(K) @ rng.standard_normal(400)
    obj = ObjectiveSpec("gp_sample", 1, np.array([[-1.0, 1.0]]), "minimize",
                        lambda x: float(np.interp(x[0], grid, f)))
    return obj, float(f.min())


@pytest.mark.slow
def test_single_gp_beats_random_on_stationary_sample():
    obj, fmin = _gp_sample_objective()
    gp, rs = [], []
    for seed in range(5):
        cfg = RunConfig(objective="levy", dim=1, budget=15, init_count=5, burn_in=20, sweeps=5,
                        adam_steps=30, restarts=8, seed=seed, output_dir="unused")
        gp.append(single_gp_bo(obj, 15, 5, seed, config=cfg).best_values[-1] - fmin)
        rs.append(random_search(obj, 15, np.random.default_rng(seed)).best_values[-1] - fmin)
    assert np.median(gp) <= np.median(rs)
