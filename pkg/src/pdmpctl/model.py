"""Controlled PDMP data model and primitive evaluations.

A model is a bundle of vectorized callables.  States are passed as arrays of
shape ``(k, n)``, actions as arrays of shape ``(k,)`` holding action *values*
(``ModelSpec.actions`` lists the finite action set; code elsewhere mostly
works with indices into that list).
"""
from dataclasses import dataclass, field, replace
import hashlib
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import ContractViolation, DiagnosticError, DomainError, NumericError

#: index used for the cemetery point wherever a boundary index is expected
CEMETERY = -1


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, dim) if dim > 1 or x.size != 1 else x.reshape(1, 1)
    return x


@dataclass(frozen=True)
class ModelSpec:
    """A controlled PDMP on an open set ``E`` inside the box ``[lower, upper]``.

    ``flow(X, t)``, ``hit_time(X)``, ``intensity(X, a)``, ``kernel(X, a)``,
    ``running_cost(X, a)`` and ``boundary_cost(Z, a)`` are all vectorized over
    the leading axis.  ``kernel`` returns ``(support, weights)`` with shapes
    ``(k, m, n)`` and ``(k, m)``; weights are renormalized on construction.
    ``feasible(X)`` returns a ``(k, n_actions)`` mask or is ``None`` when every
    action is always allowed.
    """

    name: str
    state_dim: int
    lower: np.ndarray
    upper: np.ndarray
    actions: np.ndarray
    flow: Callable
    hit_time: Callable
    intensity: Callable
    kernel: Callable
    running_cost: Callable
    boundary_cost: Callable
    interior_test: Callable
    feasible: Optional[Callable] = None
    flow_kind: str = "closed_form"
    drift: Optional[Callable] = None
    step_hint: float = 1e-2
    fd_step: float = 1e-5
    flow_tol: float = 1e-9
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "lower", np.atleast_1d(np.asarray(self.lower, float)))
        object.__setattr__(self, "upper", np.atleast_1d(np.asarray(self.upper, float)))
        object.__setattr__(self, "actions", np.atleast_1d(np.asarray(self.actions, float)))
        if self.flow_kind not in ("closed_form", "ode_defined"):
            raise ContractViolation(f"unknown flow_kind {self.flow_kind!r}")
        if self.flow_kind == "ode_defined" and self.drift is None:
            raise ContractViolation("ode_defined flows need a drift field")
        raw = self.kernel
        if not getattr(raw, "_normalized", False):
            object.__setattr__(self, "kernel", _normalized_kernel(raw))

    @property
    def n_actions(self):
        return len(self.actions)

    def points(self, x):
        return _as_points(x, self.state_dim)

    def action_mask(self, X):
        """Feasibility mask ``(k, n_actions)``; never empty for valid models."""
        X = self.points(X)
        if self.feasible is None:
            return np.ones((len(X), self.n_actions), dtype=bool)
        return np.asarray(self.feasible(X), dtype=bool)

    def on_actions(self, fn, X):
        """Evaluate ``fn(X, a)`` for every action: result ``(k, n_actions)``."""
        X = self.points(X)
        k, na = len(X), self.n_actions
        Xr = np.repeat(X, na, axis=0)
        ar = np.tile(self.actions, k)
        return np.asarray(fn(Xr, ar), dtype=float).reshape(k, na)

    def with_(self, **changes):
        return replace(self, **changes)


def _normalized_kernel(kernel):
    def wrapped(X, a):
        support, weights = kernel(X, a)
        support = np.asarray(support, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if np.any(weights < 0):
            raise ContractViolation("kernel weights must be nonnegative")
        total = weights.sum(axis=1, keepdims=True)
        return support, weights / total

    wrapped._normalized = True
    return wrapped


# ---------------------------------------------------------------- primitives


def flow_at(model, x, t):
    """Position ``phi(x, t)`` of a single point; ``t`` may equal the hit time."""
    X = model.points(x)
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    ts = hit_time(model, X)
    if np.any(tt > ts * (1 + 1e-12) + 1e-15):
        raise DomainError("flow past boundary")
    out = model.flow(X, np.broadcast_to(tt, (len(X),)))
    return out[0] if np.ndim(x) <= 1 else out


def hit_time(model, x):
    """Boundary hit time(s); ``inf`` when the flow never leaves ``E``."""
    X = model.points(x)
    out = np.asarray(model.hit_time(X), dtype=float)
    if np.any(~(out > 0)):
        raise DomainError("hit time must be positive for interior points")
    return out


def kernel_expectation(model, h, x, a):
    """``Qh(x, a)`` for one point and an action index."""
    X = model.points(x)
    mask = model.action_mask(X)
    if not mask[0, a]:
        raise ContractViolation(f"action {a} infeasible at {X[0]}")
    support, weights = model.kernel(X, model.actions[[a]])
    vals = _evaluate(h, support[0])
    return float(weights[0] @ vals)


def _evaluate(h, X):
    if callable(h):
        return np.asarray(h(X), dtype=float)
    return np.full(len(X), float(h))


class Derivative(NamedTuple):
    value: float
    reduced_accuracy: bool


def directional_derivatives(model, v, X):
    """Flow derivative of ``v`` at each row of ``X``.

    Uses the second-order forward stencil ``(-3v0 + 4v1 - v2) / 2h`` since flows
    are only defined forward in time.  Points whose hit time is at most ``2h``
    fall back to a first-order difference with a step inside the domain; they
    are flagged in the returned mask.
    """
    X = model.points(X)
    h = model.fd_step
    ts = hit_time(model, X)
    reduced = ts <= 2 * h
    step = np.where(reduced, ts / 2.0, h)
    v0 = _evaluate(v, X)
    v1 = _evaluate(v, model.flow(X, step))
    v2 = _evaluate(v, model.flow(X, 2 * step))
    second = (-3 * v0 + 4 * v1 - v2) / (2 * step)
    first = (v1 - v0) / step
    return np.where(reduced, first, second), reduced


def directional_derivative(model, v, x):
    vals, flag = directional_derivatives(model, v, x)
    return Derivative(float(vals[0]), bool(flag[0]))


# -------------------------------------------------------------- ode support


def ode_flow(drift, flow_tol):
    """Build a vectorized flow map from an autonomous drift field."""

    def flow(X, t):
        X = np.asarray(X, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(X),))
        out = np.empty_like(X)
        for i in range(len(X)):
            if t[i] == 0:
                out[i] = X[i]
                continue
            sol = solve_ivp(
                lambda s, y: drift(y[None, :])[0],
                (0.0, t[i]),
                X[i],
                method="DOP853",
                rtol=flow_tol,
                atol=flow_tol,
            )
            if not sol.success:
                raise NumericError(
                    "ODE integration failed", last_time=float(sol.t[-1])
                )
            out[i] = sol.y[:, -1]
        return out

    return flow


def ode_hit_time(drift, boundary_distance, t_scan, step, monotone_after=True, tol=1e-10):
    """Hit-time solver for ODE flows.

    Integrates each point on a dense fixed-step grid up to ``t_scan`` and locates
    the first sign change of ``boundary_distance`` by bracketing root search on
    the dense output.  Without a sign change the point is declared never to exit
    only when ``monotone_after`` asserts the distance cannot turn back.
    """

    def hit(X):
        X = np.asarray(X, dtype=float)
        out = np.empty(len(X))
        grid = np.arange(0.0, t_scan + step, step)
        for i in range(len(X)):
            sol = solve_ivp(
                lambda s, y: drift(y[None, :])[0],
                (0.0, t_scan),
                X[i],
                method="DOP853",
                rtol=1e-12,
                atol=1e-12,
                dense_output=True,
                t_eval=grid,
            )
            d = boundary_distance(sol.y.T)
            neg = np.nonzero(d <= 0)[0]
            if len(neg):
                j = neg[0]
                if j == 0:
                    raise DomainError("point is not interior")
                f = lambda s: boundary_distance(sol.sol(s)[None, :])[0]
                out[i] = brentq(f, grid[j - 1], grid[j], xtol=tol, rtol=1e-15)
            else:
                tail = np.diff(d[-max(3, len(d) // 10):])
                if not monotone_after and np.any(tail < 0):
                    raise DiagnosticError(
                        "hit time detection ambiguous: distance oscillates",
                        point=X[i].tolist(),
                    )
                out[i] = np.inf
        return out

    return hit


def flow_samples(model, x, times):
    """Positions ``phi(x, t)`` for one origin at many nondecreasing times."""
    x = np.asarray(x, dtype=float).reshape(-1)
    times = np.asarray(times, dtype=float)
    if model.flow_kind == "closed_form":
        return model.flow(np.repeat(x[None, :], len(times), axis=0), times)
    out = np.empty((len(times), len(x)))
    pos = times > 0
    out[~pos] = x
    if pos.any():
        t = times[pos]
        sol = solve_ivp(
            lambda s, y: model.drift(y[None, :])[0],
            (0.0, float(t.max())),
            x,
            method="DOP853",
            rtol=model.flow_tol,
            atol=model.flow_tol,
            dense_output=True,
        )
        if not sol.success:
            raise NumericError("ODE integration failed", last_time=float(sol.t[-1]))
        out[pos] = sol.sol(t).T
    return out


# --------------------------------------------------------------------- grid


class StateGrid:
    """Tensor grid of interior points plus the boundary points they reach.

    Interior values are interpolated multilinearly (clamped at the outer grid
    lines); boundary values are looked up at the nearest boundary point.
    """

    def __init__(self, model, axes):
        self.model = model
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        if len(self.axes) != model.state_dim:
            raise ContractViolation("one axis per state dimension required")
        mesh = np.meshgrid(*self.axes, indexing="ij")
        self.shape = tuple(len(a) for a in self.axes)
        self.points = np.stack([m.ravel() for m in mesh], axis=1)
        inside = np.asarray(model.interior_test(self.points), dtype=bool)
        if not inside.all():
            raise DomainError("grid points must lie in the interior")
        self.hit_times = hit_time(model, self.points)
        finite = np.isfinite(self.hit_times)
        bpts = np.zeros((0, model.state_dim))
        self.boundary_index = np.full(len(self.points), CEMETERY, dtype=np.int64)
        if finite.any():
            images = model.flow(self.points[finite], self.hit_times[finite])
            key = np.round(images, 9)
            bpts_key, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
            bpts = images[first]
            self.boundary_index[finite] = inv.ravel()
        self.boundary_points = bpts

    @property
    def n_interior(self):
        return len(self.points)

    @property
    def n_boundary(self):
        return len(self.boundary_points)

    def interp_matrix(self, X):
        """Sparse ``(k, n_interior)`` multilinear interpolation matrix."""
        X = self.model.points(X)
        k, n = X.shape
        idx_lo, frac = [], []
        for d, ax in enumerate(self.axes):
            if len(ax) == 1:
                idx_lo.append(np.zeros(k, dtype=np.int64))
                frac.append(np.zeros(k))
                continue
            j = np.clip(np.searchsorted(ax, X[:, d], side="right") - 1, 0, len(ax) - 2)
            t = np.clip((X[:, d] - ax[j]) / (ax[j + 1] - ax[j]), 0.0, 1.0)
            idx_lo.append(j)
            frac.append(t)
        rows, cols, vals = [], [], []
        strides = np.cumprod((self.shape[1:] + (1,))[::-1])[::-1]
        for corner in range(2 ** n):
            w = np.ones(k)
            flat = np.zeros(k, dtype=np.int64)
            for d in range(n):
                bit = (corner >> d) & 1
                if len(self.axes[d]) == 1 and bit:
                    w = w * 0.0
                w = w * (frac[d] if bit else 1.0 - frac[d])
                flat += (idx_lo[d] + bit) * strides[d]
            keep = w != 0
            rows.append(np.nonzero(keep)[0])
            cols.append(np.minimum(flat[keep], self.n_interior - 1))
            vals.append(w[keep])
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(k, self.n_interior),
        )

    def nearest_interior(self, X):
        X = self.model.points(X)
        strides = np.cumprod((self.shape[1:] + (1,))[::-1])[::-1]
        flat = np.zeros(len(X), dtype=np.int64)
        for d, ax in enumerate(self.axes):
            j = np.clip(np.searchsorted(ax, X[:, d]), 1, max(len(ax) - 1, 1))
            if len(ax) == 1:
                j = np.zeros(len(X), dtype=np.int64)
            else:
                left = ax[j - 1]
                right = ax[j]
                j = np.where(np.abs(X[:, d] - left) <= np.abs(right - X[:, d]), j - 1, j)
            flat += j * strides[d]
        return flat

    def nearest_boundary(self, Z):
        Z = self.model.points(Z)
        if self.n_boundary == 0:
            return np.full(len(Z), CEMETERY, dtype=np.int64)
        d = ((Z[:, None, :] - self.boundary_points[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d, axis=1)

    def centroid_index(self):
        """Grid point nearest the centroid of the interior points."""
        c = self.points.mean(axis=0)
        d = ((self.points - c) ** 2).sum(axis=1)
        return int(np.argmin(d))

    def digest(self):
        h = hashlib.sha256()
        h.update(self.model.name.encode())
        for ax in self.axes:
            h.update(np.ascontiguousarray(ax).tobytes())
        h.update(np.ascontiguousarray(self.model.actions).tobytes())
        return h.hexdigest()[:16]


class GridFunction:
    """Values on the interior grid (and optionally the boundary points).

    When built from a callable the callable is kept and used for off-grid
    evaluation, so witness functions are evaluated exactly everywhere.
    """

    def __init__(self, grid, values, boundary_values=None, fn=None):
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (grid.n_interior,):
            raise ContractViolation("one value per interior grid point required")
        if boundary_values is not None:
            boundary_values = np.asarray(boundary_values, dtype=float)
        self.boundary_values = boundary_values
        self.fn = fn

    @classmethod
    def from_callable(cls, grid, fn):
        bvals = fn(grid.boundary_points) if grid.n_boundary else np.zeros(0)
        return cls(grid, fn(grid.points), bvals, fn=fn)

    @classmethod
    def constant(cls, grid, value):
        return cls.from_callable(grid, lambda X: np.full(len(X), float(value)))

    def __call__(self, X):
        X = self.grid.model.points(X)
        if self.fn is not None:
            return np.asarray(self.fn(X), dtype=float)
        return self.grid.interp_matrix(X) @ self.values

    def at_boundary(self, idx):
        idx = np.asarray(idx)
        if self.boundary_values is None:
            raise ContractViolation("grid function has no boundary extension")
        return self.boundary_values[idx]

    def norm(self, weight):
        """Weighted sup norm ``max |v| / weight`` over interior grid points."""
        w = weight.values if isinstance(weight, GridFunction) else np.asarray(weight)
        return float(np.max(np.abs(self.values) / w))

    def copy_with(self, values, boundary_values=None):
        return GridFunction(self.grid, values, boundary_values)


def grid_norm(values, weight):
    w = weight.values if isinstance(weight, GridFunction) else np.asarray(weight)
    return float(np.max(np.abs(values) / w))


# ----------------------------------------------------------------- witnesses


@dataclass(frozen=True)
class GrowthWitness:
    """Lyapunov-type function ``g`` with its constants and boundary companion."""

    g: Callable
    r_bar: Callable
    b: float
    c: float
    delta: float
    M: float

    def __post_init__(self):
        if not self.c > 0 or not self.delta > 0 or self.b < 0 or self.M < 0:
            raise ContractViolation("need b >= 0, c > 0, delta > 0, M >= 0")


@dataclass(frozen=True)
class Hyp8aWitness:
    """Lower intensity bound, upper cost bound and the integral constant."""

    lambda_lower: Callable
    f_upper: Callable
    K_lambda: float


@dataclass(frozen=True)
class ErgodicityWitness:
    a_const: float
    kappa: float
    nu_g: float
    fit_residual: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.kappa < 1.0):
            raise ContractViolation("kappa must lie in (0, 1)")
