"""One-stage operator by backward induction along flows, and feedback selectors."""
from dataclasses import dataclass, field
import hashlib
from typing import Optional

import numpy as np
from scipy import sparse

from .errors import ContractViolation, NumericError
from .kernels import backward_induction
from .model import CEMETERY, GridFunction, _evaluate
from .operators import ControlPath, FlowBundle, QuadratureConfig, path_layout


@dataclass
class FeedbackSelector:
    """Action index per interior grid point and per boundary grid point."""

    grid: object
    interior_map: np.ndarray
    boundary_map: np.ndarray

    def __post_init__(self):
        self.interior_map = np.asarray(self.interior_map, dtype=np.int64)
        self.boundary_map = np.asarray(self.boundary_map, dtype=np.int64)
        if self.interior_map.shape != (self.grid.n_interior,):
            raise ContractViolation("interior_map needs one entry per interior grid point")
        if self.boundary_map.shape != (self.grid.n_boundary,):
            raise ContractViolation("boundary_map needs one entry per boundary grid point")
        model = self.grid.model
        ok = model.action_mask(self.grid.points)[np.arange(self.grid.n_interior), self.interior_map]
        if not ok.all():
            raise ContractViolation("selector assigns an infeasible interior action")
        if self.grid.n_boundary:
            okb = model.action_mask(self.grid.boundary_points)[
                np.arange(self.grid.n_boundary), self.boundary_map
            ]
            if not okb.all():
                raise ContractViolation("selector assigns an infeasible boundary action")

    @classmethod
    def constant(cls, grid, action):
        return cls(grid, np.full(grid.n_interior, action), np.full(grid.n_boundary, action))

    @classmethod
    def random(cls, grid, rng):
        """Uniform random feasible selector."""
        model = grid.model

        def draw(X):
            mask = model.action_mask(X)
            u = rng.random(mask.shape) * mask
            return np.argmax(u + mask, axis=1)

        bmap = draw(grid.boundary_points) if grid.n_boundary else np.zeros(0, np.int64)
        return cls(grid, draw(grid.points), bmap)

    def action_at(self, X):
        return self.interior_map[self.grid.nearest_interior(X)]

    def boundary_action_at(self, Z):
        return self.boundary_map[self.grid.nearest_boundary(Z)]

    def path_actions(self, bundle):
        """Actions ``(P, N)`` and boundary actions ``(P,)`` induced on a bundle."""
        P, N = bundle.dt.shape
        left = bundle.points[:, :, 0, :].reshape(-1, bundle.model.state_dim)
        acts = self.action_at(left).reshape(P, N)
        acts[bundle.dt == 0] = 0
        bacts = np.zeros(P, dtype=np.int64)
        if bundle.hits.any() and self.grid.n_boundary:
            bacts[bundle.hits] = self.boundary_action_at(bundle.end_points[bundle.hits])
        return acts, bacts

    def path(self, model, x, quad):
        """The control path the selector induces along the flow from ``x``."""
        bundle = FlowBundle(model, self.grid, quad, origins=np.asarray(x, float)[None, ...])
        acts, bacts = self.path_actions(bundle)
        n = int(bundle.n_int[0])
        hits = bool(bundle.hits[0])
        return ControlPath(
            bundle.origins[0].copy(),
            bundle.times[0, : n + 1].copy(),
            acts[0, :n].copy(),
            int(bacts[0]) if hits else None,
            hits,
        )

    def digest(self):
        h = hashlib.sha256()
        h.update(self.grid.digest().encode())
        h.update(self.interior_map.tobytes())
        h.update(self.boundary_map.tobytes())
        return h.hexdigest()[:16]


@dataclass
class OneStageResult:
    value: float
    path: ControlPath
    hamiltonian_trace: dict = field(default_factory=dict)


# ------------------------------------------------------------ pointwise argmins


def _first_argmin(vals):
    return int(np.argmin(vals))


def boundary_selector(model, h, z):
    """Minimize ``r(z, a) + Qh(z, a)`` over the feasible actions at ``z``."""
    Z = model.points(z)
    mask = model.action_mask(Z)[0]
    if not mask.any():
        raise ContractViolation("empty action set at boundary point")
    r = model.on_actions(model.boundary_cost, Z)[0]
    q = _q_all_actions(model, h, Z)[0]
    vals = np.where(mask, r + q, np.inf)
    a = _first_argmin(vals)
    return a, float(vals[a])


def hamiltonian_selector(model, w_val, h, x):
    """Minimize ``f(x, a) - lambda(x, a) (w - Qh(x, a))`` over feasible actions."""
    X = model.points(x)
    mask = model.action_mask(X)[0]
    if not mask.any():
        raise ContractViolation("empty action set")
    f = model.on_actions(model.running_cost, X)[0]
    lam = model.on_actions(model.intensity, X)[0]
    q = _q_all_actions(model, h, X)[0]
    vals = np.where(mask, f - lam * (w_val - q), np.inf)
    a = _first_argmin(vals)
    return a, float(vals[a])


def _q_all_actions(model, h, X):
    k, A = len(X), model.n_actions
    support, weights = model.kernel(np.repeat(X, A, axis=0), np.tile(model.actions, k))
    hv = _evaluate(h, support.reshape(-1, model.state_dim)).reshape(weights.shape)
    return (weights * hv).sum(axis=1).reshape(k, A)


# ---------------------------------------------------------------- grid sweeps


@dataclass
class SweepResult:
    values: np.ndarray          # w at every origin
    node_values: np.ndarray     # (P, N + 1) cost-to-go along each path
    policy: np.ndarray          # (P, N) minimizing interval actions
    boundary_actions: np.ndarray  # (P,) boundary argmin (0 where no boundary)
    tail: np.ndarray            # (P,) certified truncation bound


class OneStageOperator:
    """``T_alpha(rho, h)`` evaluated at every origin of a :class:`FlowBundle`."""

    def __init__(self, model, grid, quad, alpha, bundle=None, min_alpha=0.0):
        if alpha < min_alpha - 1e-15:
            raise ContractViolation(f"alpha must be at least {min_alpha}")
        self.model, self.grid, self.quad, self.alpha = model, grid, quad, float(alpha)
        self.bundle = bundle if bundle is not None else FlowBundle(model, grid, quad)
        self.w = self.bundle.weights(alpha)

    def boundary_terms(self, qv, with_cost=True):
        """Best boundary value and action per origin (0 where the path is truncated)."""
        b = self.bundle
        r = b.boundary_cost if with_cost else 0.0
        vals = np.where(b.boundary_mask, r + qv[b.boundary_qidx], np.inf)
        acts = np.argmin(vals, axis=1)
        best = vals[np.arange(len(acts)), acts]
        best = np.where(b.hits, best, 0.0)
        acts = np.where(b.hits, acts, 0)
        return best, acts

    def apply(self, rho, h, check_tail=True, with_cost=True):
        """Backward induction on every path; ``with_cost=False`` drops ``f`` and ``r``."""
        b = self.bundle
        hv = h.values if isinstance(h, GridFunction) else np.asarray(h, dtype=float)
        if hv.ndim == 0:
            hv = np.full(self.grid.n_interior, float(hv))
        if not np.all(np.isfinite(hv)):
            raise NumericError("non-finite values in h")
        qv = b.kernel_rows @ hv
        stage = self.w.stage(rho, qv, with_cost)
        terminal, bacts = self.boundary_terms(qv, with_cost)
        nodes, policy = backward_induction(stage, np.ascontiguousarray(self.w.decay), terminal)
        sup_int = float(np.max(np.abs(b.cost)) + abs(rho) + np.max(b.lam) * np.max(np.abs(qv)))
        tail = self.w.tail_bound(sup_int)
        if check_tail:
            tol = self.quad.tail_tol * max(1.0, float(np.max(np.abs(hv))))
            bad = tail > tol
            if bad.any():
                rate = self.w.tail_rate[bad]
                worst = float(tail[bad].max())
                t_end = float(b.t_end[bad].max())
                need = t_end + np.log(worst / tol) / rate.min() if rate.min() > 0 else np.inf
                raise NumericError(
                    f"tail certificate failed: bound {worst:.3g} > {tol:.3g}; "
                    f"t_max of at least {need:.4g} is required",
                    required_t_max=float(need),
                )
        return SweepResult(nodes[:, 0].copy(), nodes, policy, bacts, tail)

    def hamiltonian_argmin(self, w_values, h):
        """Interior Hamiltonian selector at each origin given ``w`` there."""
        b = self.bundle
        hv = h.values if isinstance(h, GridFunction) else np.asarray(h, dtype=float)
        if hv.ndim == 0:
            hv = np.full(self.grid.n_interior, float(hv))
        qv = b.kernel_rows @ hv
        f = b.cost[:, 0, 0, :]
        lam = b.lam[:, 0, 0, :]
        q = qv[b.qidx[:, 0, 0, :]]
        ham = f - lam * (np.asarray(w_values)[:, None] - q)
        ham = np.where(b.mask[:, 0, :], ham, np.inf)
        acts = np.argmin(ham, axis=1)
        return acts, ham[np.arange(len(acts)), acts]

    def grid_boundary_argmin(self, h):
        """Boundary selector at every grid boundary point."""
        grid = self.grid
        if grid.n_boundary == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        hv = h.values if isinstance(h, GridFunction) else np.asarray(h, dtype=float)
        if hv.ndim == 0:
            hv = np.full(grid.n_interior, float(hv))
        qv = self.bundle.kernel_rows @ hv
        _, acts_origin = self.boundary_terms(qv)
        b = self.bundle
        vals = np.where(b.boundary_mask, b.boundary_cost + qv[b.boundary_qidx], np.inf)
        acts = np.zeros(grid.n_boundary, dtype=np.int64)
        best = np.zeros(grid.n_boundary)
        for j in range(grid.n_boundary):
            i = int(np.nonzero(grid.boundary_index == j)[0][0])
            acts[j] = int(np.argmin(vals[i]))
            best[j] = vals[i, acts[j]]
        return acts, best

    def evaluate_actions(self, acts, bacts):
        return PolicyEvaluation(self, acts, bacts)

    def evaluate_selector(self, selector):
        acts, bacts = selector.path_actions(self.bundle)
        return PolicyEvaluation(self, acts, bacts)


class PolicyEvaluation:
    """Linear operators of a fixed control path per origin.

    ``L(v)``, ``H(w)`` and the matrix ``G`` (origins x interior grid) reproduce
    ``L_alpha``, ``H_alpha`` and ``G_alpha`` for the given per-interval actions.
    """

    def __init__(self, op, acts, bacts):
        b, wts = op.bundle, op.w
        self.op = op
        P, N = acts.shape
        rows = np.arange(P)[:, None]
        cols = np.arange(N)[None, :]
        self.acts, self.bacts = acts, bacts
        self.decay = wts.decay[rows, cols, acts]
        self.survival = np.concatenate([np.ones((P, 1)), np.cumprod(self.decay, axis=1)], axis=1)
        self.node_w = wts.node_w[rows, cols, acts]  # (P, N, 3)
        self.jump_w = wts.jump_w[rows, cols, acts]
        qidx = wts.qidx[rows, cols, acts]  # (P, N, 3)
        S = self.survival[:, :-1]
        self.curly = (S * wts.curly[rows, cols, acts]).sum(axis=1)
        self.Lf = (S * wts.cost_int[rows, cols, acts]).sum(axis=1)
        sN = np.where(b.hits, self.survival[np.arange(P), b.n_int], 0.0)
        self.end_survival = sN
        r = b.boundary_cost[np.arange(P), bacts]
        self.Hr = np.where(b.hits, sN * r, 0.0)
        coef_rows = np.repeat(np.arange(P), N * 3)
        coef = (S[:, :, None] * self.jump_w).ravel()
        bq = b.boundary_qidx[np.arange(P), bacts]
        C = sparse.csr_matrix(
            (
                np.concatenate([coef, sN]),
                (np.concatenate([coef_rows, np.arange(P)]), np.concatenate([qidx.ravel(), bq])),
            ),
            shape=(P, b.kernel_rows.shape[0]),
        )
        self.G = (C @ b.kernel_rows).toarray()

    def L(self, v):
        """``L_alpha v`` for ``v(X, a)`` (or a state-only callable with ``a`` ignored)."""
        b = self.op.bundle
        P, N = self.acts.shape
        pts = b.points.reshape(-1, b.model.state_dim)
        a = np.repeat(b.model.actions[self.acts], 3, axis=1).ravel()
        try:
            vals = np.asarray(v(pts, a), dtype=float)
        except TypeError:
            vals = np.asarray(v(pts), dtype=float)
        vals = vals.reshape(P, N, 3)
        return (self.survival[:, :-1, None] * self.node_w * vals).sum(axis=(1, 2))

    def H(self, w):
        """``H_alpha w`` for ``w(Z)`` or ``w(Z, a)`` at the path end."""
        b = self.op.bundle
        Z = b.end_points
        a = b.model.actions[self.bacts]
        try:
            vals = np.asarray(w(Z, a), dtype=float)
        except TypeError:
            vals = np.asarray(w(Z), dtype=float)
        return np.where(b.hits, self.end_survival * vals, 0.0)

    def apply_G(self, h):
        hv = h.values if isinstance(h, GridFunction) else np.asarray(h, dtype=float)
        if hv.ndim == 0:
            hv = np.full(self.G.shape[1], float(hv))
        return self.G @ hv

    def value(self, rho, h):
        """``-rho curlyL + L f + H r + G h`` per origin."""
        return -rho * self.curly + self.Lf + self.Hr + self.apply_G(h)


# -------------------------------------------------------------- public entry


def eval_T(model, alpha, rho, h, x, grid, quad=None):
    """One-stage operator at a single state, with its minimizing path."""
    quad = quad or QuadratureConfig()
    bundle = FlowBundle(model, grid, quad, origins=np.asarray(x, float)[None, ...])
    op = OneStageOperator(model, grid, quad, alpha, bundle=bundle)
    res = op.apply(rho, h)
    n = int(bundle.n_int[0])
    hits = bool(bundle.hits[0])
    path = ControlPath(
        bundle.origins[0].copy(),
        bundle.times[0, : n + 1].copy(),
        res.policy[0, :n].copy(),
        int(res.boundary_actions[0]) if hits else None,
        hits,
    )
    trace = _hamiltonian_trace(op, res, h, n)
    return OneStageResult(float(res.values[0]), path, trace)


def _hamiltonian_trace(op, res, h, n):
    b = op.bundle
    hv = h.values if isinstance(h, GridFunction) else np.asarray(h, dtype=float)
    if hv.ndim == 0:
        hv = np.full(op.grid.n_interior, float(hv))
    qv = b.kernel_rows @ hv
    f = b.cost[0, :n, 0, :]
    lam = b.lam[0, :n, 0, :]
    q = qv[b.qidx[0, :n, 0, :]]
    w = res.node_values[0, :n]
    ham = np.where(b.mask[0, :n], f - lam * (w[:, None] - q), np.inf)
    acts = np.argmin(ham, axis=1)
    return {"time": b.times[0, :n].copy(), "action": acts,
            "value": ham[np.arange(n), acts]}


def extract_selector(model, alpha, rho, h, grid, quad=None, op=None, method="hamiltonian"):
    """Feedback selector from ``w = T(rho, h)``.

    ``method="hamiltonian"`` minimizes the pointwise Hamiltonian at each grid
    point; ``method="dp"`` reads the first-interval argmin of the backward
    induction, which is the minimizer of the discretized problem itself.
    Boundary points always use the boundary argmin.
    """
    quad = quad or QuadratureConfig()
    op = op or OneStageOperator(model, grid, quad, alpha)
    res = op.apply(rho, h)
    if method == "hamiltonian":
        acts, _ = op.hamiltonian_argmin(res.values, h)
    elif method == "dp":
        acts = res.policy[:, 0].copy()
    else:
        raise ContractViolation(f"unknown selector method {method!r}")
    bacts, _ = op.grid_boundary_argmin(h)
    return FeedbackSelector(grid, acts, bacts)
