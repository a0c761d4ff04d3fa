"""Built-in benchmark models, their witnesses, and brute-force oracles.

``A`` ("drain-and-reset") lives on (0, 1): the state drains at unit speed
towards 0, jumps at rate ``a (1 + x)`` and every jump (including the forced
one at 0) lands uniformly on {0.5, 0.6, 0.7, 0.8}.

``B`` ("decay-no-boundary") lives on (0, 5): the state decays exponentially
and never reaches the boundary, jumps at rate ``a + x / 2`` and lands
uniformly on {1, 2, 3}.
"""
from dataclasses import dataclass, replace
import functools
import itertools
import json
from importlib import resources

import numpy as np

from .diagnostics import calibrate_growth, estimate_K_lambda
from .errors import ConfigError, ContractViolation
from .model import GrowthWitness, Hyp8aWitness, ModelSpec, StateGrid, ode_flow, ode_hit_time
from .operators import QuadratureConfig


def _col(X):
    return np.asarray(X, dtype=float)[:, 0]


def _uniform_kernel(points):
    pts = np.asarray(points, dtype=float).reshape(-1, 1)

    def kernel(X, a):
        k = len(X)
        return np.broadcast_to(pts, (k,) + pts.shape), np.full((k, len(pts)), 1.0 / len(pts))

    return kernel


def model_a():
    return ModelSpec(
        name="A",
        state_dim=1,
        lower=[0.0],
        upper=[1.0],
        actions=[0.5, 1.0, 1.5, 2.0],
        flow=lambda X, t: X - np.asarray(t, float)[:, None],
        hit_time=lambda X: _col(X).copy(),
        intensity=lambda X, a: a * (1 + _col(X)),
        kernel=_uniform_kernel([0.5, 0.6, 0.7, 0.8]),
        running_cost=lambda X, a: _col(X) + 0.2 * a**2,
        boundary_cost=lambda Z, a: np.ones(len(Z)),
        interior_test=lambda X: (_col(X) > 0) & (_col(X) < 1),
    )


def model_b():
    return ModelSpec(
        name="B",
        state_dim=1,
        lower=[0.0],
        upper=[5.0],
        actions=[1.0, 2.0, 3.0],
        flow=lambda X, t: X * np.exp(-np.asarray(t, float))[:, None],
        hit_time=lambda X: np.full(len(X), np.inf),
        intensity=lambda X, a: a + 0.5 * _col(X),
        kernel=_uniform_kernel([1.0, 2.0, 3.0]),
        running_cost=lambda X, a: _col(X) ** 2 / (1 + _col(X)) + 0.1 * a,
        boundary_cost=lambda Z, a: np.zeros(len(Z)),
        interior_test=lambda X: (_col(X) > 0) & (_col(X) < 5),
    )


def model_a_ode(flow_tol=1e-9):
    """``A`` with the drift ``-(1 + x / 10)`` integrated numerically."""
    drift = lambda X: -(1 + 0.1 * np.asarray(X, float))
    base = model_a()
    return replace(
        base,
        name="A-ode",
        flow_kind="ode_defined",
        drift=drift,
        flow=ode_flow(drift, flow_tol),
        hit_time=ode_hit_time(drift, lambda X: np.asarray(X, float)[:, 0], t_scan=2.0, step=1e-3),
        flow_tol=flow_tol,
    )


def _state_kernel(X, a):
    pts = np.array([0.5, 0.6, 0.7, 0.8])
    x = _col(X)[:, None]
    w = np.exp(-((x - pts[None, :]) ** 2) / 0.05)
    return np.broadcast_to(pts[:, None], (len(x), 4, 1)), w


def _grid_axis(lo, step, n):
    return np.round(lo + step * np.arange(n), 12)


@dataclass
class Benchmark:
    """A model with its grid, quadrature settings, witnesses and oracle grid."""

    id: str
    model: ModelSpec
    grid: StateGrid
    quad: QuadratureConfig
    witness: GrowthWitness
    hyp8a: Hyp8aWitness
    coarse_grid: StateGrid
    description: str = ""


def _a_parts(model):
    grid = StateGrid(model, [_grid_axis(0.01, 0.01, 99)])
    quad = QuadratureConfig(node_count=100, rule="simpson")
    coarse = StateGrid(model, [np.array([0.1, 0.3, 0.5, 0.7, 0.9])])
    return grid, quad, coarse


def _b_parts(model):
    grid = StateGrid(model, [_grid_axis(0.05, 0.05, 99)])
    quad = QuadratureConfig(node_count=64, rule="simpson", t_max=25.0)
    coarse = StateGrid(model, [np.array([0.5, 1.5, 2.5, 3.5, 4.5])])
    return grid, quad, coarse


def _a_witnesses(model, grid, quad, c=0.25, delta=0.25):
    g = lambda X: 2.0 - _col(X)
    r_bar = lambda Z: np.full(len(Z), 0.5)
    w = calibrate_growth(model, grid, quad, g, r_bar, c, delta)
    lam_lo = lambda X: model.actions.min() * (1 + _col(X))
    f_up = lambda X: _col(X) + 0.2 * model.actions.max() ** 2
    partial = Hyp8aWitness(lam_lo, f_up, 0.0)
    K = estimate_K_lambda(model, partial, c, grid, quad)
    return w, Hyp8aWitness(lam_lo, f_up, K)


def _b_witnesses(model, grid, quad, c=0.5, delta=0.25):
    g = lambda X: 1.0 + _col(X)
    r_bar = lambda Z: np.zeros(len(Z))
    w = calibrate_growth(model, grid, quad, g, r_bar, c, delta)
    lam_lo = lambda X: 1.0 + 0.5 * _col(X)
    f_up = lambda X: _col(X) ** 2 / (1 + _col(X)) + 0.3
    partial = Hyp8aWitness(lam_lo, f_up, 0.0)
    K = estimate_K_lambda(model, partial, c, grid, quad, t_scan=quad.t_max)
    return w, Hyp8aWitness(lam_lo, f_up, K)


def _zero(X, a):
    return np.zeros(len(X))


def _const(c0):
    return lambda X, a: np.full(len(X), float(c0))


def _variant(base, name, **changes):
    return replace(base, name=name, **changes)


def _build(bench_id):
    if bench_id in ("A", "A-zero-intensity", "A-zero-cost", "A-constant-cost", "A-state-kernel", "A-ode"):
        base = model_a()
        if bench_id == "A-zero-intensity":
            model = _variant(base, bench_id, intensity=_zero)
        elif bench_id == "A-zero-cost":
            model = _variant(base, bench_id, running_cost=_zero, boundary_cost=_zero)
        elif bench_id == "A-constant-cost":
            model = _variant(base, bench_id, running_cost=_const(1.0), boundary_cost=_zero)
        elif bench_id == "A-state-kernel":
            model = _variant(base, bench_id, kernel=_state_kernel)
        elif bench_id == "A-ode":
            model = model_a_ode()
        else:
            model = base
        grid, quad, coarse = _a_parts(model)
        if bench_id == "A-zero-intensity":
            w, _ = _a_witnesses(model, grid, quad)
            h8 = Hyp8aWitness(lambda X: np.zeros(len(X)), lambda X: _col(X) + 0.8, 0.0)
            h8 = Hyp8aWitness(h8.lambda_lower, h8.f_upper,
                              estimate_K_lambda(model, h8, w.c, grid, quad))
        else:
            w, h8 = _a_witnesses(model, grid, quad)
        desc = "drain-and-reset on (0, 1)"
    elif bench_id in ("B", "B-zero-intensity", "B-zero-cost", "B-constant-cost"):
        base = model_b()
        if bench_id == "B-zero-intensity":
            model = _variant(base, bench_id, intensity=_zero)
        elif bench_id == "B-zero-cost":
            model = _variant(base, bench_id, running_cost=_zero, boundary_cost=_zero)
        elif bench_id == "B-constant-cost":
            model = _variant(base, bench_id, running_cost=_const(1.0), boundary_cost=_zero)
        else:
            model = base
        grid, quad, coarse = _b_parts(model)
        if bench_id == "B-zero-intensity":
            g = lambda X: 1.0 + _col(X)
            w = calibrate_growth(model, grid, quad, g, lambda Z: np.zeros(len(Z)), 0.5, 0.25)
            h8 = Hyp8aWitness(lambda X: np.zeros(len(X)), lambda X: _col(X) + 0.3, np.inf)
        else:
            w, h8 = _b_witnesses(model, grid, quad)
        desc = "exponential decay on (0, 5), no boundary"
    else:
        raise ConfigError(f"unknown benchmark id {bench_id!r}; known: {', '.join(BENCHMARK_IDS)}")
    return Benchmark(bench_id, model, grid, quad, w, h8, coarse, desc)


BENCHMARK_IDS = (
    "A", "A-zero-intensity", "A-zero-cost", "A-constant-cost", "A-state-kernel", "A-ode",
    "B", "B-zero-intensity", "B-zero-cost", "B-constant-cost",
)


@functools.lru_cache(maxsize=None)
def get_benchmark(bench_id):
    return _build(bench_id)


# ---------------------------------------------------------------- oracles


def enumerate_policies(model, coarse_grid):
    """All feedback selectors on a coarse grid as ``(interior, boundary)`` tables."""
    A = model.n_actions
    n_i, n_b = coarse_grid.n_interior, coarse_grid.n_boundary
    imask = model.action_mask(coarse_grid.points)
    bmask = model.action_mask(coarse_grid.boundary_points) if n_b else np.ones((0, A), bool)
    choices = [np.nonzero(m)[0] for m in imask] + [np.nonzero(m)[0] for m in bmask]
    combos = np.array(list(itertools.product(*choices)), dtype=np.int64)
    if len(combos) == 0:
        combos = np.zeros((1, n_i + n_b), dtype=np.int64)
    return combos[:, :n_i], combos[:, n_i:]


@dataclass
class OracleResult:
    value: float
    std_error: float
    best_policy: int
    means: np.ndarray
    std_errors: np.ndarray
    n_policies: int
    seed: int

    def as_dict(self):
        return {
            "value": self.value,
            "std_error": self.std_error,
            "best_policy": self.best_policy,
            "n_policies": self.n_policies,
            "seed": self.seed,
        }


def _policy_chunks(n, jobs):
    jobs = max(1, int(jobs))
    edges = np.linspace(0, n, jobs + 1).astype(int)
    return [(edges[i], edges[i + 1]) for i in range(jobs) if edges[i + 1] > edges[i]]


def _oracle_worker(args):
    from .simulator import PolicySet, Simulator

    bench_id, kind, x, alpha, horizon, reps, seed, lo, hi, max_policies = args
    bench = get_benchmark(bench_id)
    inter, bound = enumerate_policies(bench.model, bench.coarse_grid)
    pol = PolicySet(bench.coarse_grid, inter[lo:hi], bound[lo:hi])
    sim = Simulator(bench.model, pol, bench.quad)
    if kind == "discounted":
        est = sim.discounted_many(np.asarray(x, float), alpha, reps, seed)
    else:
        est = sim.average_many(np.asarray(x, float), horizon, reps, seed)
    return est.means, est.std_errors


def _run_oracle(bench_id, kind, x, alpha, horizon, reps, seed, jobs, budget):
    bench = get_benchmark(bench_id)
    inter, _ = enumerate_policies(bench.model, bench.coarse_grid)
    n = len(inter)
    if budget is not None and n > budget:
        from .errors import NumericError

        raise NumericError(f"policy budget exhausted: {n} policies > budget {budget}",
                           n_policies=n)
    chunks = _policy_chunks(n, jobs)
    args = [(bench_id, kind, tuple(np.atleast_1d(x)), alpha, horizon, reps, seed, lo, hi, None)
            for lo, hi in chunks]
    if len(args) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=len(args)) as ex:
            parts = list(ex.map(_oracle_worker, args))
    else:
        parts = [_oracle_worker(args[0])]
    means = np.concatenate([p[0] for p in parts])
    ses = np.concatenate([p[1] for p in parts])
    best = int(np.argmin(means))
    return OracleResult(float(means[best]), float(ses[best]), best, means, ses, n, seed)


def oracle_discounted(bench_id, x, alpha, reps=32, seed=0, jobs=1, budget=None):
    """Minimum Monte Carlo discounted cost over all coarse-grid selectors."""
    return _run_oracle(bench_id, "discounted", x, alpha, None, reps, seed, jobs, budget)


def oracle_average(bench_id, horizon=100.0, reps=8, seed=0, jobs=1, budget=None, x=None):
    """Minimum Monte Carlo long-run average cost over all coarse-grid selectors."""
    bench = get_benchmark(bench_id)
    if x is None:
        x = bench.grid.points[bench.grid.centroid_index()]
    return _run_oracle(bench_id, "average", x, None, horizon, reps, seed, jobs, budget)


def cycle_average_zero_intensity(actions, support, boundary_cost):
    """Long-run average of the deterministic drain cycle when jumps only occur at 0.

    Starting from ``y`` the state drains to 0 in time ``y`` at cost
    ``y^2 / 2 + 0.2 a^2 y`` and then pays the boundary cost.
    """
    y = np.asarray(support, float)
    a = float(np.min(actions))
    num = np.mean(y**2 / 2 + 0.2 * a**2 * y) + boundary_cost
    return float(num / np.mean(y))


def load_pinned():
    """Pinned oracle values shipped with the package."""
    text = resources.files("pdmpctl").joinpath("data/pinned_oracles.json").read_text()
    return json.loads(text)
