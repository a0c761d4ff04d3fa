import numpy as np
import pytest

from pdmpctl.benchmarks import (
    BENCHMARK_IDS,
    cycle_average_zero_intensity,
    enumerate_policies,
    get_benchmark,
    load_pinned,
    oracle_average,
    oracle_discounted,
)
from pdmpctl.errors import ConfigError, NumericError
from pdmpctl.solvers import default_schedule, solve_average, solve_discounted


@pytest.fixture(scope="module")
def pinned():
    return load_pinned()["A"]


def test_every_builtin_builds():
    for bid in BENCHMARK_IDS:
        b = get_benchmark(bid)
        assert b.grid.n_interior > 0
    with pytest.raises(ConfigError):
        get_benchmark("Z")


def test_policy_enumeration_size(bench_a):
    inter, bound = enumerate_policies(bench_a.model, bench_a.coarse_grid)
    assert inter.shape == (4096, 5) and bound.shape == (4096, 1)
    assert len({tuple(r) for r in np.hstack([inter, bound])}) == 4096


def test_cycle_average_closed_form():
    # mean y = 0.65, mean y^2 / 2 = 0.2175, 0.2 * 0.25 * 0.65 = 0.0325
    v = cycle_average_zero_intensity([0.5, 1.0], [0.5, 0.6, 0.7, 0.8], 1.0)
    assert v == pytest.approx(1.25 / 0.65, rel=1e-14)


def test_zero_intensity_average_matches_cycle():
    b = get_benchmark("A-zero-intensity")
    sol = solve_average(b.model, b.grid, b.quad, default_schedule(b.witness.c),
                        b.witness.g(b.grid.points))
    target = cycle_average_zero_intensity(b.model.actions, [0.5, 0.6, 0.7, 0.8], 1.0)
    assert sol.rho == pytest.approx(target, rel=1e-4)


@pytest.mark.parametrize("bid,expected", [("A-zero-cost", 0.0), ("A-constant-cost", 1.0)])
def test_oracle_trivial_variants(bid, expected):
    o = oracle_average(bid, horizon=10.0, reps=2)
    assert o.value == pytest.approx(expected, abs=1e-9)
    assert o.n_policies == 4096 and np.all(np.isfinite(o.means))


def test_oracle_budget(bench_a):
    with pytest.raises(NumericError):
        oracle_average("A", horizon=10.0, reps=2, budget=100)


def test_oracle_discounted_constant_cost():
    o = oracle_discounted("A-constant-cost", [0.7], 0.5, reps=2)
    assert o.value == pytest.approx(2.0, abs=2e-3)


def test_pinned_average_oracle_reproduces(pinned):
    p = pinned["average"]
    o = oracle_average("A", horizon=p["horizon"], reps=p["reps"], seed=p["seed"])
    assert o.value == p["value"] and o.std_error == p["std_error"]
    assert o.best_policy == p["best_policy"]


def test_oracle_stable_under_more_replications(pinned):
    p = pinned["average"]
    o = oracle_average("A", horizon=p["horizon"], reps=2 * p["reps"], seed=p["seed"])
    assert abs(o.value - p["value"]) <= 2 * np.hypot(o.std_error, p["std_error"])


def test_solver_consistent_with_pinned_oracles(bench_a, pinned):
    d = pinned["discounted"]
    sol = solve_discounted(bench_a.model, d["alpha"], bench_a.grid, bench_a.quad)
    j = float(sol.value(np.array([d["x0"]]))[0])
    # the solver optimizes over a richer class than the coarse enumeration
    assert j <= d["value"] + 3 * d["std_error"]
    assert j >= d["value"] - 3 * d["std_error"]
    a = pinned["average"]
    rho = solve_average(bench_a.model, bench_a.grid, bench_a.quad, default_schedule(0.25),
                        bench_a.witness.g(bench_a.grid.points)).rho
    assert rho <= a["value"] + 3 * a["std_error"]
