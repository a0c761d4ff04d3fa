import numpy as np
import pytest
from hypothesis import given, strategies as st

from pdmpctl.benchmarks import get_benchmark, model_a, model_b
from pdmpctl.errors import ContractViolation, DomainError
from pdmpctl.model import (
    CEMETERY,
    GridFunction,
    GrowthWitness,
    ErgodicityWitness,
    StateGrid,
    directional_derivative,
    flow_at,
    hit_time,
    kernel_expectation,
)


def test_flow_examples():
    A, B = model_a(), model_b()
    assert flow_at(A, 0.7, 0.2)[0] == pytest.approx(0.5)
    assert flow_at(B, 2.0, 0.0)[0] == 2.0
    assert flow_at(A, 0.7, 0.7)[0] == pytest.approx(0.0, abs=1e-15)


def test_flow_past_boundary_is_a_domain_error():
    with pytest.raises(DomainError, match="flow past boundary"):
        flow_at(model_a(), 0.3, 0.31)


def test_hit_time_examples():
    assert hit_time(model_a(), 0.3)[0] == pytest.approx(0.3)
    assert np.isinf(hit_time(model_b(), [[2.5]])[0])


def test_hit_time_ode_variant():
    m = get_benchmark("A-ode").model
    # dx/dt = -(1 + x/10) from 0.5 reaches 0 at t = 10 ln(1.05)
    assert hit_time(m, 0.5)[0] == pytest.approx(10 * np.log(1.05), abs=1e-9)


def test_ode_flow_matches_closed_form():
    m = get_benchmark("A-ode").model
    x, t = 0.8, 0.3
    exact = (x + 10) * np.exp(-t / 10) - 10
    assert flow_at(m, x, t)[0] == pytest.approx(exact, abs=1e-8)


@pytest.mark.parametrize("name", ["A", "B", "A-ode"])
def test_flow_semigroup(name):
    m = get_benchmark(name).model
    rng = np.random.default_rng(1)
    n = 100 if name != "A-ode" else 20
    X = rng.uniform(m.lower[0] + 0.3, m.upper[0] - 0.01, (n, 1))
    ts = hit_time(m, X)
    span = np.where(np.isfinite(ts), ts, 3.0)
    t = rng.uniform(0, 0.5, n) * span
    s = rng.uniform(0, 0.5, n) * span
    lhs = m.flow(m.flow(X, t), s)
    rhs = m.flow(X, t + s)
    np.testing.assert_allclose(lhs, rhs, atol=10 * m.flow_tol + 1e-12)


@pytest.mark.parametrize("name", ["A", "A-ode"])
def test_hit_time_consistency_on_grid(name):
    b = get_benchmark(name)
    m = b.model
    X = b.grid.points[:: 7 if name == "A-ode" else 1]
    ts = hit_time(m, X)
    before = m.flow(X, ts - 1e-9)
    assert np.all(m.interior_test(before))
    at = m.flow(X, ts)
    if m.flow_kind == "closed_form":
        assert not np.any(m.interior_test(at))
    # integrated flows land on the boundary up to the integration tolerance
    np.testing.assert_allclose(at, 0.0, atol=10 * m.flow_tol)
    assert b.grid.n_boundary == 1


def test_kernel_expectation_examples():
    A = model_a()
    for a in range(A.n_actions):
        assert kernel_expectation(A, 3.5, 0.4, a) == pytest.approx(3.5)
        assert kernel_expectation(A, lambda Y: Y[:, 0], 0.4, a) == pytest.approx(0.65)


def test_kernel_expectation_model_b_witness(bench_b):
    B = bench_b.model
    g = bench_b.witness.g
    grid_g = GridFunction.from_callable(bench_b.grid, g)
    # support {1, 2, 3} lies on the grid, so interpolation is exact
    for a in range(B.n_actions):
        assert kernel_expectation(B, grid_g, 2.0, a) == pytest.approx((2 + 3 + 4) / 3, abs=1e-12)


def test_kernel_expectation_rejects_infeasible_action():
    A = model_a().with_(feasible=lambda X: np.tile([True, False, True, True], (len(X), 1)))
    with pytest.raises(ContractViolation):
        kernel_expectation(A, 1.0, 0.5, 1)


@pytest.mark.parametrize("name", ["A", "B", "A-state-kernel"])
def test_kernel_normalized_and_maps_inside(name):
    m = get_benchmark(name).model
    X = get_benchmark(name).grid.points
    for a in m.actions:
        support, w = m.kernel(X, np.full(len(X), a))
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-15)
        assert np.all(w >= 0)
        assert np.all(m.interior_test(support.reshape(-1, 1)))


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1))
def test_kernel_expectation_linear_and_monotone(c1, c2, x):
    A = model_a()
    x = min(max(x, 0.01), 0.99)
    h1 = lambda Y: Y[:, 0] ** 2
    h2 = lambda Y: np.sin(Y[:, 0])
    combo = lambda Y: c1 * h1(Y) + c2 * h2(Y)
    lhs = kernel_expectation(A, combo, x, 1)
    rhs = c1 * kernel_expectation(A, h1, x, 1) + c2 * kernel_expectation(A, h2, x, 1)
    assert lhs == pytest.approx(rhs, abs=1e-12)
    assert kernel_expectation(A, h1, x, 2) <= kernel_expectation(A, lambda Y: h1(Y) + 0.1, x, 2)


def test_directional_derivative_examples():
    A, B = model_a(), model_b()
    ident = lambda X: X[:, 0]
    assert directional_derivative(A, ident, 0.5).value == pytest.approx(-1.0, abs=1e-9)
    assert directional_derivative(B, ident, 2.0).value == pytest.approx(-2.0, abs=1e-8)
    d = directional_derivative(A, lambda X: X[:, 0] ** 2, 0.5)
    assert d.value == pytest.approx(-1.0, abs=1e-6)
    assert not d.reduced_accuracy


def test_directional_derivative_near_boundary_is_flagged():
    A = model_a()
    d = directional_derivative(A, lambda X: X[:, 0], 1.5e-5)
    assert d.reduced_accuracy
    assert d.value == pytest.approx(-1.0, abs=1e-9)


def test_grid_boundary_points_and_cemetery(bench_a, bench_b):
    ga, gb = bench_a.grid, bench_b.grid
    assert ga.n_boundary == 1 and ga.boundary_points[0, 0] == pytest.approx(0.0)
    assert np.all(ga.boundary_index == 0)
    assert gb.n_boundary == 0 and np.all(gb.boundary_index == CEMETERY)


@given(st.lists(st.floats(-5, 5), min_size=99, max_size=99))
def test_interpolation_exact_at_nodes_and_monotone(vals):
    grid = get_benchmark("A").grid
    v = np.asarray(vals)
    f = GridFunction(grid, v)
    np.testing.assert_allclose(f(grid.points), v, atol=1e-12)
    X = np.linspace(0.001, 0.999, 57)[:, None]
    assert np.all(GridFunction(grid, v + np.abs(v) + 0.1)(X) >= f(X) - 1e-12)


def test_g_norm(bench_a):
    grid = bench_a.grid
    g = bench_a.witness.g(grid.points)
    v = GridFunction(grid, -3 * g)
    assert v.norm(g) == pytest.approx(3.0)


def test_witness_validation():
    with pytest.raises(ContractViolation):
        GrowthWitness(lambda X: 1, lambda Z: 0, b=1, c=0, delta=1, M=1)
    with pytest.raises(ContractViolation):
        ErgodicityWitness(1.0, 1.0, 0.0)


def test_grid_rejects_points_outside():
    with pytest.raises(DomainError):
        StateGrid(model_a(), [np.array([0.0, 0.5])])
