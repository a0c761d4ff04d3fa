import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pdmpctl.benchmarks import get_benchmark
from pdmpctl.model import ModelSpec

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def col(X):
    return np.asarray(X, float)[:, 0]


def toy_model(
    name="toy",
    actions=(1.0,),
    intensity=None,
    running_cost=None,
    boundary_cost=None,
    support=(0.5,),
    boundary=True,
    upper=1.0,
):
    """One-dimensional test model.

    With ``boundary=True`` the state drains at unit speed to 0 (hit time x);
    otherwise it stays put and never leaves (hit time infinite).
    """
    pts = np.asarray(support, float).reshape(-1, 1)
    zero = lambda X, a: np.zeros(len(X))
    if boundary:
        flow = lambda X, t: X - np.asarray(t, float)[:, None]
        hit = lambda X: col(X).copy()
    else:
        flow = lambda X, t: np.array(X, float, copy=True)
        hit = lambda X: np.full(len(X), np.inf)
    return ModelSpec(
        name=name,
        state_dim=1,
        lower=[0.0],
        upper=[upper],
        actions=list(actions),
        flow=flow,
        hit_time=hit,
        intensity=intensity or zero,
        kernel=lambda X, a: (np.broadcast_to(pts, (len(X),) + pts.shape),
                             np.ones((len(X), len(pts)))),
        running_cost=running_cost or zero,
        boundary_cost=boundary_cost or zero,
        interior_test=lambda X: (col(X) > 0) & (col(X) < upper),
    )


def const(c0):
    return lambda X, a: np.full(len(X), float(c0))


@pytest.fixture(scope="session")
def bench_a():
    return get_benchmark("A")


@pytest.fixture(scope="session")
def bench_b():
    return get_benchmark("B")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
