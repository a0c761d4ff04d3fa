import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pdmpctl.benchmarks import model_a
from pdmpctl.model import StateGrid
from pdmpctl.onestage import (
    FeedbackSelector,
    OneStageOperator,
    boundary_selector,
    eval_T,
    extract_selector,
    hamiltonian_selector,
)
from pdmpctl.operators import ControlPath, QuadratureConfig, eval_G, eval_H, eval_L, eval_curly_L
from pdmpctl.solvers import solve_discounted

from conftest import const, toy_model


@pytest.fixture(scope="module")
def a_solution(bench_a):
    return solve_discounted(bench_a.model, 0.5, bench_a.grid, bench_a.quad)


def test_boundary_selector_singleton():
    m = toy_model(boundary_cost=const(0.7), support=(0.5,))
    a, v = boundary_selector(m, lambda Y: 2 * Y[:, 0], [[0.0]])
    assert a == 0 and v == pytest.approx(0.7 + 1.0)


def test_boundary_selector_quadratic_minimum():
    m = toy_model(actions=(-1.0, 0.0, 1.0), boundary_cost=lambda Z, a: a**2)
    assert boundary_selector(m, 0.0, [[0.0]]) == (1, 0.0)


def test_boundary_selector_model_a_by_enumeration(bench_a, a_solution):
    m = bench_a.model
    h = a_solution.value
    a, v = boundary_selector(m, h, [[0.0]])
    vals = [1.0 + np.mean(h(np.array([[0.5], [0.6], [0.7], [0.8]]))) for _ in m.actions]
    assert a == int(np.argmin(vals)) == 0  # r and Q do not depend on the action
    assert v == pytest.approx(min(vals), abs=1e-12)


def test_hamiltonian_selector_zero_intensity_minimizes_cost():
    m = toy_model(actions=(2.0, 0.5, 1.0), running_cost=lambda X, a: a**2)
    assert hamiltonian_selector(m, 3.0, lambda Y: Y[:, 0], 0.4)[0] == 1


def test_hamiltonian_selector_degenerate_tie_goes_first():
    m = toy_model(actions=(1.0, 2.0, 3.0), intensity=lambda X, a: a, support=(0.5,))
    h = lambda Y: np.full(len(Y), 0.25)
    a, v = hamiltonian_selector(m, 0.25, h, 0.6)
    assert a == 0 and v == 0.0


def test_hamiltonian_selector_model_a_by_enumeration(bench_a, a_solution):
    m = bench_a.model
    h = a_solution.value
    x = 0.5
    w = float(h(np.array([[x]]))[0])
    Qh = float(np.mean(h(np.array([[0.5], [0.6], [0.7], [0.8]]))))
    ham = [x + 0.2 * a**2 - a * (1 + x) * (w - Qh) for a in m.actions]
    a, v = hamiltonian_selector(m, w, h, x)
    assert a == int(np.argmin(ham))
    assert v == pytest.approx(min(ham), abs=1e-12)


def test_eval_T_zero_data():
    m = toy_model(actions=(1.0, 2.0), intensity=lambda X, a: a)
    grid = StateGrid(m, [np.linspace(0.1, 0.9, 9)])
    r = eval_T(m, 0.3, 0.0, 0.0, [0.7], grid, QuadratureConfig(node_count=16))
    assert r.value == 0.0


def test_eval_T_transports_constants():
    m = toy_model(actions=(1.0, 2.0), intensity=lambda X, a: a)
    grid = StateGrid(m, [np.linspace(0.1, 0.9, 9)])
    r = eval_T(m, 0.0, 0.0, 4.2, [0.7], grid, QuadratureConfig(node_count=16))
    assert r.value == pytest.approx(4.2, abs=1e-12)


def test_eval_T_matches_exhaustive_path_search():
    # three actions, eight intervals: all 3^8 piecewise-constant paths
    m = model_a().with_(actions=np.array([0.5, 1.0, 2.0]))
    q = QuadratureConfig(node_count=10)
    grid = StateGrid(m, [np.linspace(0.1, 0.9, 9)])
    x = 0.8
    res = eval_T(m, 0.5, 0.0, 0.0, [x], grid, q)
    nodes = res.path.time_nodes
    assert len(nodes) == 9
    best = np.inf
    for acts in itertools.product(range(3), repeat=8):
        p = ControlPath(np.array([x]), nodes, np.array(acts), 0, True)
        best = min(best, eval_L(m, 0.5, m.running_cost, p, q) + eval_H(m, 0.5, m.boundary_cost, p, q))
    assert res.value == pytest.approx(best, abs=1e-12)


def test_one_stage_result_self_consistent(bench_a, a_solution):
    m, g, q = bench_a.model, bench_a.grid, bench_a.quad
    h = a_solution.value
    rho = 0.4
    for x in (0.15, 0.5, 0.95):
        r = eval_T(m, 0.5, rho, h, [x], g, q)
        again = (-rho * eval_curly_L(m, 0.5, r.path, q) + eval_L(m, 0.5, m.running_cost, r.path, q)
                 + eval_H(m, 0.5, m.boundary_cost, r.path, q) + eval_G(m, 0.5, h, r.path, q))
        hjb_tol = 1e-6 * (1 + h.norm(bench_a.witness.g(g.points)))
        assert abs(again - r.value) <= hjb_tol
        trace = r.hamiltonian_trace
        assert len(trace["action"]) == r.path.n_intervals


@pytest.mark.parametrize("alpha,rho", [(0.5, 0.0), (0.0, 1.5)])
def test_selector_optimality_against_random_selectors(bench_a, a_solution, alpha, rho):
    m, g, q = bench_a.model, bench_a.grid, bench_a.quad
    h = a_solution.value.values
    op = OneStageOperator(m, g, q, alpha)
    w = op.apply(rho, h).values
    hjb_tol = 1e-6 * (1 + np.max(np.abs(h) / bench_a.witness.g(g.points)))
    rng = np.random.default_rng(11)
    for _ in range(50):
        sel = FeedbackSelector.random(g, rng)
        assert np.all(w <= op.evaluate_selector(sel).value(rho, h) + hjb_tol)
    # the dynamic-programming argmin achieves the minimum
    dp = extract_selector(m, alpha, rho, h, g, q, op=op, method="dp")
    assert np.max(np.abs(op.evaluate_selector(dp).value(rho, h) - w)) <= hjb_tol
    # the pointwise Hamiltonian selector places switches to grid resolution
    ham = extract_selector(m, alpha, rho, h, g, q, op=op)
    gap = op.evaluate_selector(ham).value(rho, h) - w
    assert gap.min() >= -hjb_tol and gap.max() <= 1e-4


def test_extract_selector_degenerate_ties():
    m = toy_model(actions=(1.0, 2.0), intensity=lambda X, a: a)
    grid = StateGrid(m, [np.linspace(0.1, 0.9, 9)])
    sel = extract_selector(m, 0.0, 0.0, 0.0, grid, QuadratureConfig(node_count=16))
    assert np.all(sel.interior_map == 0) and np.all(sel.boundary_map == 0)


def test_extract_selector_singleton_actions():
    m = toy_model(actions=(1.3,), intensity=lambda X, a: a, running_cost=lambda X, a: X[:, 0])
    grid = StateGrid(m, [np.linspace(0.1, 0.9, 9)])
    sel = extract_selector(m, 0.2, 0.0, 0.0, grid, QuadratureConfig(node_count=16))
    assert np.all(sel.interior_map == 0)


@given(st.floats(0, 2), st.integers(0, 2**31 - 1))
def test_monotone_in_h_and_antitone_in_rho(shift, seed):
    from pdmpctl.benchmarks import get_benchmark

    b = get_benchmark("A")
    op = _op_cache(b)
    rng = np.random.default_rng(seed)
    h1 = rng.normal(size=b.grid.n_interior)
    h2 = h1 + np.abs(rng.normal(size=b.grid.n_interior))
    assert np.all(op.apply(0.3, h1).values <= op.apply(0.3, h2).values + 1e-12)
    lo = op.apply(0.3, h1).values
    hi = op.apply(0.3 + shift, h1).values
    assert np.all(hi <= lo + 1e-12)
    # shift bounded by (rho2 - rho1) K_lambda
    assert np.all(lo - hi <= shift * b.hyp8a.K_lambda + 1e-9)


_OPS = {}


def _op_cache(b):
    if b.id not in _OPS:
        _OPS[b.id] = OneStageOperator(b.model, b.grid, b.quad, 0.5)
    return _OPS[b.id]
