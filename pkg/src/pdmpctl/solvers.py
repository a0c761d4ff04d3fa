"""Discounted value iteration and the vanishing-discount average-cost scheme."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractViolation, ConvergenceError, DiagnosticError
from .model import GridFunction, grid_norm
from .onestage import FeedbackSelector, OneStageOperator, extract_selector
from .operators import FlowBundle


@dataclass
class DiscountedSolution:
    alpha: float
    value: GridFunction
    selector: FeedbackSelector
    iterations: int
    residual: float
    residual_trace: list = field(default_factory=list)
    lower_gap: float = 0.0
    upper_gap: float = 0.0


@dataclass
class AverageSolution:
    rho: float
    h: GridFunction
    selector: FeedbackSelector
    rho_trace: list
    acoi_residual: float
    x0_index: int
    h_trace: list = field(default_factory=list)
    acoi_tol: float = 0.0
    discounted: list = field(default_factory=list)


class DiscountedSolver:
    """Value iteration ``v <- T_alpha(0, v)`` on a fixed grid and bundle.

    The ``accelerated`` method adds the largest constant that keeps the iterate
    a subsolution (``T v >= v``), using the per-point lower bound on
    ``G_alpha 1`` over all paths; the iterates stay pointwise below the fixed
    point and the gap to it is bracketed at every step.  ``plain`` performs the
    bare iteration from ``v = 0``.
    """

    def __init__(self, model, grid, quad, bundle=None, weight=None):
        self.model, self.grid, self.quad = model, grid, quad
        self.bundle = bundle if bundle is not None else FlowBundle(model, grid, quad)
        if weight is None:
            weight = np.ones(grid.n_interior)
        self.weight = weight.values if isinstance(weight, GridFunction) else np.asarray(weight, float)

    def operator(self, alpha):
        return OneStageOperator(self.model, self.grid, self.quad, alpha, bundle=self.bundle)

    def solve(self, alpha, vi_tol=1e-8, max_iter=100000, method="accelerated", warm_start=None,
              selector_method="hamiltonian"):
        if not alpha > 0:
            raise ContractViolation("discounted problems need alpha > 0")
        op = self.operator(alpha)
        P = self.grid.n_interior
        v = np.zeros(P) if warm_start is None else np.array(warm_start, dtype=float)
        beta_min = None
        if method == "accelerated":
            # smallest G_alpha 1 over all paths, from a sweep with zero costs
            beta_min = op.apply(0.0, np.ones(P), check_tail=False, with_cost=False).values
        elif method != "plain":
            raise ContractViolation(f"unknown iteration method {method!r}")
        trace = []
        lo = hi = 0.0
        for it in range(1, max_iter + 1):
            res = op.apply(0.0, v)
            tv = res.values
            d = tv - v
            resid = grid_norm(d, self.weight)
            trace.append(resid)
            if method == "plain":
                v = tv
                if resid <= vi_tol:
                    break
                continue
            pe = op.evaluate_actions(res.policy, res.boundary_actions)
            beta_g = 1.0 - alpha * pe.curly
            gap_lo = 1.0 - beta_min
            gap_hi = 1.0 - beta_g
            lo = float(np.min(d / gap_lo))
            hi = float(np.max(d / gap_hi))
            v = np.maximum(tv, v + max(lo, 0.0))
            if resid <= vi_tol and (hi - max(lo, 0.0)) * min(alpha, 1.0) <= vi_tol:
                break
        else:
            raise ConvergenceError(
                f"value iteration did not converge in {max_iter} iterations",
                residual_trace=trace,
            )
        value = GridFunction(self.grid, v)
        sel = extract_selector(self.model, alpha, 0.0, v, self.grid, self.quad, op=op,
                               method=selector_method)
        return DiscountedSolution(alpha, value, sel, it, trace[-1], trace, lo, hi)


def solve_discounted(model, alpha, grid, quad, vi_tol=1e-8, max_iter=100000, method="accelerated",
                     weight=None, bundle=None, selector_method="hamiltonian", warm_start=None):
    solver = DiscountedSolver(model, grid, quad, bundle=bundle, weight=weight)
    return solver.solve(alpha, vi_tol, max_iter, method, warm_start=warm_start,
                        selector_method=selector_method)


def neumann_check(model, sol, grid, quad, K, weight, bundle=None):
    """``|S_k - J|_g`` for ``k = 0..K``, where ``S_k`` are the partial sums of
    ``G^j (L f + H r)`` under the solution's selector."""
    op = OneStageOperator(model, grid, quad, sol.alpha, bundle=bundle)
    pe = op.evaluate_selector(sol.selector)
    one_jump = pe.Lf + pe.Hr
    term = one_jump.copy()
    s = term.copy()
    errs = [grid_norm(s - sol.value.values, weight)]
    for _ in range(K):
        term = pe.G @ term
        s = s + term
        errs.append(grid_norm(s - sol.value.values, weight))
    return np.array(errs)


def default_schedule(c, n_terms=12):
    return [(c / 2.0) * 2.0 ** (-k) for k in range(n_terms)]


def solve_average(model, grid, quad, schedule, weight, x0_index=None, vi_tol=1e-8,
                  rho_tol=None, acoi_tol=None, bundle=None, selector_method="hamiltonian",
                  h_tol=None):
    """Vanishing-discount scheme over a decreasing discount schedule."""
    schedule = [float(a) for a in schedule]
    if any(b >= a for a, b in zip(schedule, schedule[1:])) or min(schedule) <= 0:
        raise ContractViolation("schedule must be strictly decreasing and positive")
    if x0_index is None:
        x0_index = grid.centroid_index()
    wv = weight.values if isinstance(weight, GridFunction) else np.asarray(weight, float)
    solver = DiscountedSolver(model, grid, quad, bundle=bundle, weight=wv)
    rho_trace, h_trace, sols = [], [], []
    warm = None
    for alpha in schedule:
        sol = solver.solve(alpha, vi_tol, warm_start=warm, selector_method=selector_method)
        J = sol.value.values
        rho_k = alpha * J[x0_index]
        h_k = J - J[x0_index]
        rho_trace.append((alpha, float(rho_k)))
        h_trace.append(h_k)
        sols.append(sol)
        warm = J
    rho0 = rho_trace[0][1]
    rtol = 1e-4 * max(1.0, rho0) if rho_tol is None else rho_tol
    rho_last, rho_prev = rho_trace[-1][1], rho_trace[-2][1]
    h_last, h_prev = h_trace[-1], h_trace[-2]
    h_change = grid_norm(h_last - h_prev, wv)
    if abs(rho_last - rho_prev) > rtol:
        raise ConvergenceError(
            f"rho not Cauchy: |{rho_last:.6g} - {rho_prev:.6g}| > {rtol:.3g}",
            rho_trace=rho_trace,
        )
    if h_tol is not None and h_change > h_tol:
        raise ConvergenceError(f"h not stabilized: change {h_change:.3g}", rho_trace=rho_trace)
    h = np.minimum(h_last, h_prev)
    h_fn = GridFunction(grid, h)
    op0 = OneStageOperator(model, grid, quad, 0.0, bundle=solver.bundle)
    w0 = op0.apply(rho_last, h)
    resid = h - w0.values
    tol = 1e-3 * (1 + grid_norm(h, wv)) if acoi_tol is None else acoi_tol
    if resid.min() < -tol:
        i = int(np.argmin(resid))
        raise DiagnosticError(
            f"average-cost optimality inequality fails at {grid.points[i].tolist()}: "
            f"residual {resid[i]:.3g} < -{tol:.3g}",
            rho_trace=rho_trace,
        )
    sel = extract_selector(model, 0.0, rho_last, h, grid, quad, op=op0, method=selector_method)
    return AverageSolution(float(rho_last), h_fn, sel, rho_trace, float(resid.min()), x0_index,
                           h_trace, tol, sols)


@dataclass
class BoundReport:
    slack: np.ndarray
    violations: list
    pair_slack_min: Optional[float] = None
    pair_violations: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations and not self.pair_violations


def value_bound(witness, gv, alpha):
    return witness.M * gv / (witness.c + alpha) + witness.M * witness.b / (witness.c * alpha)


def check_value_bounds(sol, witness, grid, K_lambda=None, ergodicity=None, n_pairs=200, seed=0,
                       tol=0.0):
    """Slack of the value bound per grid point and of the pairwise oscillation bound."""
    gv = np.asarray(witness.g(grid.points), float)
    J = sol.value.values
    slack = value_bound(witness, gv, sol.alpha) - J
    viol = [(grid.points[i].tolist(), float(slack[i])) for i in np.nonzero(slack < -tol)[0]]
    rep = BoundReport(slack, viol)
    if ergodicity is not None and K_lambda is not None:
        M, b, c = witness.M, witness.b, witness.c
        m_prime = M * (1 + b / c) * (1 + b * K_lambda) / c
        const = ergodicity.a_const * m_prime / (1 - ergodicity.kappa)
        rng = np.random.default_rng(seed)
        i = rng.integers(0, grid.n_interior, n_pairs)
        j = rng.integers(0, grid.n_interior, n_pairs)
        ps = const * (1 + gv[j]) * gv[i] - np.abs(J[i] - J[j])
        rep.pair_slack_min = float(ps.min())
        rep.pair_violations = [
            (grid.points[a].tolist(), grid.points[bb].tolist(), float(s))
            for a, bb, s in zip(i, j, ps) if s < -tol
        ]
    return rep


def transversality_monitor(model, sol, grid, quad, horizons, reps=50, seed=0):
    """Monte Carlo ``E[T(rho, h)(X(t))] / t`` along the solution's policy.

    Returns ``(horizon, ratio)`` pairs; a ratio bounded below (near zero)
    supports the transversality requirement on finite horizons.
    """
    from .simulator import PolicySet, Simulator

    op0 = OneStageOperator(model, grid, quad, 0.0)
    w = op0.apply(sol.rho, sol.h.values).values
    sim = Simulator(model, PolicySet.from_selector(sol.selector), quad)
    x0 = grid.points[sol.x0_index]
    out = []
    for t in horizons:
        states = sim.terminal_states(x0, float(t), reps, seed)
        vals = GridFunction(grid, w)(states)
        out.append((float(t), float(np.mean(vals) / t)))
    return out
