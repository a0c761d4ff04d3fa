"""Quadrature of the hazard and the discounted jump operators along flows.

Every interval ``[t_k, t_k+1]`` of a path carries a constant action and three
samples (left, mid, right) of the intensity and of whatever function is being
integrated.  Between samples the data are replaced by their Lagrange
interpolant (quadratic for ``simpson``, linear for ``trapezoid``).  The hazard
increment is the exact integral of that interpolant, and the weighted integrals
against ``exp(-alpha s - hazard)`` are taken with 5-point Gauss-Legendre.

Because the same interpolant drives both the hazard and the jump density, the
discrete weights satisfy ``G 1 + alpha L 1 = 1`` up to rounding on every
path that ends at the boundary.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse

from .errors import ContractViolation, NumericError
from .model import CEMETERY, GridFunction, flow_samples, hit_time, _evaluate

_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)
GL_NODES = 0.5 * (_GL_X + 1.0)
GL_WEIGHTS = 0.5 * _GL_W
SAMPLE_FRACTIONS = np.array([0.0, 0.5, 1.0])


def _basis(rule, u):
    """Basis values and their running integrals at local times ``u``."""
    u = np.asarray(u, dtype=float)[..., None]
    if rule == "simpson":
        vals = np.concatenate(
            [2 * (u - 0.5) * (u - 1), -4 * u * (u - 1), 2 * u * (u - 0.5)], axis=-1
        )
        ints = np.concatenate(
            [
                2 * u**3 / 3 - 1.5 * u**2 + u,
                -4 * u**3 / 3 + 2 * u**2,
                2 * u**3 / 3 - 0.5 * u**2,
            ],
            axis=-1,
        )
    elif rule == "trapezoid":
        vals = np.concatenate([1 - u, 0 * u, u], axis=-1)
        ints = np.concatenate([u - u**2 / 2, 0 * u, u**2 / 2], axis=-1)
    else:
        raise ContractViolation(f"unknown quadrature rule {rule!r}")
    return vals, ints


@dataclass(frozen=True)
class QuadratureConfig:
    """Path discretization: nodes per unit time, rule, horizon and tail bound."""

    node_count: int = 64
    rule: str = "simpson"
    t_max: Optional[float] = None
    tail_tol: float = 1e-7

    def __post_init__(self):
        if self.node_count < 1:
            raise ContractViolation("node_count must be positive")
        _basis(self.rule, 0.0)

    def horizon(self, t_star):
        t_star = np.asarray(t_star, dtype=float)
        if self.t_max is None:
            if np.any(~np.isfinite(t_star)):
                raise ContractViolation("t_max is required when the hit time is infinite")
            return t_star
        return np.minimum(t_star, self.t_max)

    def n_intervals(self, t_end):
        t_end = np.asarray(t_end, dtype=float)
        return np.maximum(1, np.ceil(t_end * self.node_count - 1e-9)).astype(np.int64)

    def nodes(self, t_end):
        return np.linspace(0.0, float(t_end), int(self.n_intervals(t_end)) + 1)


def interval_weights(alpha, lam3, dt, rule):
    """Per-interval quadrature weights.

    Parameters
    ----------
    lam3 : ndarray (..., 3)
        Intensity at the left, middle and right sample of each interval.
    dt : ndarray (...)
        Interval lengths; zero-length intervals are allowed (padding).

    Returns
    -------
    node_w : (..., 3)  weights so that ``node_w @ v3`` integrates
        ``exp(-alpha s - hazard) v`` over the interval.
    jump_w : (..., 3)  same with the extra factor ``lambda``.
    decay : (...)      ``exp(-alpha dt - hazard increment)``.
    """
    B, Bint = _basis(rule, GL_NODES)
    _, Bint1 = _basis(rule, 1.0)
    lam3 = np.asarray(lam3, dtype=float)
    dt = np.asarray(dt, dtype=float)[..., None]
    lam_q = lam3 @ B.T
    haz_q = dt * (lam3 @ Bint.T)
    E = np.exp(-alpha * dt * GL_NODES - haz_q) * GL_WEIGHTS
    node_w = dt * (E @ B)
    jump_w = dt * ((E * lam_q) @ B)
    decay = np.exp(-alpha * dt[..., 0] - dt[..., 0] * (lam3 @ Bint1))
    return node_w, jump_w, decay


@dataclass
class ControlPath:
    """Piecewise-constant control along the flow from ``origin``.

    ``actions`` holds action indices, one per interval.  ``boundary_action`` is
    set exactly when the last node is the boundary hit time.
    """

    origin: np.ndarray
    time_nodes: np.ndarray
    actions: np.ndarray
    boundary_action: Optional[int]
    hits_boundary: bool

    @property
    def n_intervals(self):
        return len(self.time_nodes) - 1


def path_layout(model, x, quad):
    """Time nodes for the flow from ``x`` and whether the last node is the boundary."""
    x = np.asarray(x, dtype=float).reshape(-1)
    ts = float(hit_time(model, x)[0])
    t_end = float(quad.horizon(ts))
    return quad.nodes(t_end), bool(np.isfinite(ts) and t_end == ts), ts


def constant_path(model, x, action, quad, boundary_action=None):
    nodes, hits, _ = path_layout(model, x, quad)
    acts = np.full(len(nodes) - 1, int(action), dtype=np.int64)
    if hits and boundary_action is None:
        boundary_action = int(action)
    return ControlPath(np.asarray(x, float).reshape(-1), nodes, acts,
                       boundary_action if hits else None, hits)


def _sample_points(model, path):
    t = path.time_nodes
    dt = np.diff(t)
    times = (t[:-1, None] + SAMPLE_FRACTIONS[None, :] * dt[:, None]).ravel()
    order = np.argsort(times, kind="stable")
    pts = np.empty((len(times), model.state_dim))
    pts[order] = flow_samples(model, path.origin, times[order])
    if path.hits_boundary:
        # last right sample sits exactly on the boundary
        pts[-1] = flow_samples(model, path.origin, [t[-1]])[0]
    return pts.reshape(len(dt), 3, model.state_dim), dt


def _check_feasible(model, path, pts):
    mask = model.action_mask(pts[:, 0, :])
    if not np.all(mask[np.arange(len(path.actions)), path.actions]):
        raise ContractViolation("path action infeasible at an interval's left endpoint")
    if path.hits_boundary:
        if path.boundary_action is None:
            raise ContractViolation("boundary action required when the path hits the boundary")
        bm = model.action_mask(pts[-1:, 2, :])
        if not bm[0, path.boundary_action]:
            raise ContractViolation("boundary action infeasible")


class PathQuadrature:
    """All quadrature data of one control path at one discount rate."""

    def __init__(self, model, path, alpha, quad):
        self.model, self.path, self.alpha, self.quad = model, path, float(alpha), quad
        pts, dt = _sample_points(model, path)
        _check_feasible(model, path, pts)
        N = len(dt)
        acts = np.repeat(model.actions[path.actions], 3)
        flat = pts.reshape(-1, model.state_dim)
        self.points = pts
        self.dt = dt
        self.act_values = acts
        self.lam3 = np.asarray(model.intensity(flat, acts), float).reshape(N, 3)
        self.node_w, self.jump_w, self.decay = interval_weights(alpha, self.lam3, dt, quad.rule)
        surv = np.concatenate([[1.0], np.cumprod(self.decay)])
        self.survival = surv  # discount-survival factor at each node
        if path.hits_boundary:
            self.boundary_point = flow_samples(model, path.origin, [path.time_nodes[-1]])[0]
        else:
            self.boundary_point = None

    def _tail(self, sup_integrand):
        """Bound on the part of the integral beyond the last node."""
        if self.path.hits_boundary:
            return 0.0
        rate = self.alpha + float(self.lam3.min())
        if rate <= 0:
            return np.inf
        return float(self.survival[-1] * sup_integrand / rate)

    def require_tail(self, sup_integrand, scale=1.0):
        tail = self._tail(sup_integrand)
        tol = self.quad.tail_tol * max(1.0, scale)
        if tail > tol:
            rate = self.alpha + float(self.lam3.min())
            t_end = self.path.time_nodes[-1]
            need = (
                t_end + np.log(tail / tol) / rate if rate > 0 and np.isfinite(tail) else np.inf
            )
            raise NumericError(
                f"tail certificate failed: bound {tail:.3g} > {tol:.3g}; "
                f"t_max of at least {need:.4g} is required",
                required_t_max=float(need),
                tail=tail,
            )
        return tail

    def integrate(self, v3):
        """``sum_k survival_k * node_w_k @ v3_k``."""
        return float(np.sum(self.survival[:-1, None] * self.node_w * v3))

    def integrate_jump(self, q3):
        return float(np.sum(self.survival[:-1, None] * self.jump_w * q3))

    def hazard_at(self, t):
        t_nodes = self.path.time_nodes
        if t < 0 or t > t_nodes[-1] * (1 + 1e-12):
            raise ContractViolation("time outside the path support")
        _, ints1 = _basis(self.quad.rule, 1.0)
        inc = self.dt * (self.lam3 @ ints1)
        k = int(np.clip(np.searchsorted(t_nodes, t, side="right") - 1, 0, len(self.dt) - 1))
        if self.dt[k] == 0:
            return float(inc[:k].sum())
        u = (t - t_nodes[k]) / self.dt[k]
        _, ints = _basis(self.quad.rule, u)
        return float(inc[:k].sum() + self.dt[k] * (self.lam3[k] @ ints))


def _values_on_path(model, v, pq):
    flat = pq.points.reshape(-1, model.state_dim)
    if callable(v):
        vals = np.asarray(v(flat, pq.act_values), dtype=float)
    else:
        vals = np.full(len(flat), float(v))
    return vals.reshape(-1, 3)


def _q_on_path(model, h, pq):
    flat = pq.points.reshape(-1, model.state_dim)
    support, weights = model.kernel(flat, pq.act_values)
    hv = _evaluate(h, support.reshape(-1, model.state_dim)).reshape(weights.shape)
    return (weights * hv).sum(axis=1).reshape(-1, 3)


def _q_at_boundary(model, h, pq):
    z = pq.boundary_point[None, :]
    a = model.actions[[pq.path.boundary_action]]
    support, weights = model.kernel(z, a)
    return float(weights[0] @ _evaluate(h, support[0]))


def _check_alpha(alpha, c_floor):
    if c_floor is not None and alpha < -c_floor - 1e-15:
        raise ContractViolation("alpha below -c is outside the supported range")


def integrated_hazard(model, path, t, quad=None):
    pq = PathQuadrature(model, path, 0.0, quad or QuadratureConfig())
    return pq.hazard_at(float(t))


def eval_L(model, alpha, v, path, quad=None, c_floor=None):
    """Discounted integral of ``v(state, action)`` up to the first jump.

    ``v`` is a callable ``v(X, a)`` or a constant.  With ``v = 1`` this is the
    expected discounted time to the first jump.
    """
    _check_alpha(alpha, c_floor)
    pq = PathQuadrature(model, path, alpha, quad or QuadratureConfig())
    v3 = _values_on_path(model, v, pq)
    pq.require_tail(float(np.max(np.abs(v3))))
    return pq.integrate(v3)


def eval_H(model, alpha, w, path, quad=None, c_floor=None):
    """Discounted boundary term ``survival(t*) w(boundary point, boundary action)``."""
    _check_alpha(alpha, c_floor)
    if not path.hits_boundary:
        return 0.0
    pq = PathQuadrature(model, path, alpha, quad or QuadratureConfig())
    if callable(w):
        wv = float(np.asarray(w(pq.boundary_point[None, :],
                                model.actions[[path.boundary_action]]))[0])
    else:
        wv = float(w)
    return float(pq.survival[-1] * wv)


def eval_G(model, alpha, h, path, quad=None, c_floor=None):
    """Discounted expectation of ``h`` at the first post-jump state.

    ``h`` is a :class:`GridFunction`, a callable of the state, or a constant.
    """
    _check_alpha(alpha, c_floor)
    pq = PathQuadrature(model, path, alpha, quad or QuadratureConfig())
    q3 = _q_on_path(model, h, pq)
    total = pq.integrate_jump(q3)
    if path.hits_boundary:
        total += pq.survival[-1] * _q_at_boundary(model, h, pq)
    else:
        pq.require_tail(float(np.max(np.abs(q3))) * max(1.0, float(pq.lam3.max())),
                        scale=float(np.max(np.abs(q3))))
    return float(total)


def eval_curly_L(model, alpha, path, quad=None, c_floor=None):
    return eval_L(model, alpha, 1.0, path, quad, c_floor)


# ------------------------------------------------------------ grid bundles


class FlowBundle:
    """Sample geometry and model data for the flows from many origins.

    Origins default to the interior grid points.  Paths are padded with
    zero-length intervals to a common length so that sweeps are plain array
    operations.  Action-dependent data are stored for every action; ``qidx``
    and ``boundary_qidx`` point into the deduplicated kernel rows
    ``kernel_rows`` (sparse ``(rows, n_interior)``, so ``kernel_rows @ h`` gives
    ``Qh`` for each distinct kernel distribution).
    """

    def __init__(self, model, grid, quad, origins=None):
        self.model, self.grid, self.quad = model, grid, quad
        if origins is None:
            origins = grid.points
            ts = grid.hit_times
        else:
            origins = model.points(origins)
            ts = hit_time(model, origins)
        self.origins = origins
        P, n, A = len(origins), model.state_dim, model.n_actions
        t_end = quad.horizon(ts)
        Ns = quad.n_intervals(t_end)
        Nmax = int(Ns.max())
        self.t_star, self.t_end, self.n_int = ts, t_end, Ns
        self.hits = np.isfinite(ts) & (t_end == ts)
        dt = np.zeros((P, Nmax))
        for i in range(P):
            dt[i, : Ns[i]] = t_end[i] / Ns[i]
        self.dt = dt
        times = np.concatenate([np.zeros((P, 1)), np.cumsum(dt, axis=1)], axis=1)
        for i in range(P):
            times[i, Ns[i]:] = t_end[i]
        self.times = times
        samp = times[:, :-1, None] + SAMPLE_FRACTIONS * dt[:, :, None]
        pts = np.empty((P, Nmax, 3, n))
        ends = np.empty((P, n))
        for i in range(P):
            tt = np.concatenate([samp[i].ravel(), [t_end[i]]])
            order = np.argsort(tt, kind="stable")
            out = np.empty((len(tt), n))
            out[order] = flow_samples(model, origins[i], tt[order])
            ends[i] = out[-1]
            pts[i] = out[:-1].reshape(Nmax, 3, n)
            # padded samples and the last right sample sit at the path end
            pts[i, Ns[i] - 1, 2] = ends[i]
            pts[i, Ns[i]:] = ends[i]
        self.points = pts
        self.end_points = ends
        flat = pts.reshape(-1, n)
        self.lam = model.on_actions(model.intensity, flat).reshape(P, Nmax, 3, A)
        self.cost = model.on_actions(model.running_cost, flat).reshape(P, Nmax, 3, A)
        mask = model.action_mask(pts[:, :, 0, :].reshape(-1, n)).reshape(P, Nmax, A)
        mask[dt == 0] = True
        self.mask = mask
        hit_idx = np.nonzero(self.hits)[0]
        self.boundary_cost = np.zeros((P, A))
        self.boundary_mask = np.ones((P, A), dtype=bool)
        if len(hit_idx):
            Z = ends[hit_idx]
            self.boundary_cost[hit_idx] = model.on_actions(model.boundary_cost, Z)
            self.boundary_mask[hit_idx] = model.action_mask(Z)
        self._build_kernel_rows(flat, ends)

    def _build_kernel_rows(self, flat, ends):
        model, grid = self.model, self.grid
        P, Nmax, A = self.dt.shape[0], self.dt.shape[1], model.n_actions
        X = np.concatenate([flat, ends])
        k = len(X)
        support, weights = model.kernel(np.repeat(X, A, axis=0), np.tile(model.actions, k))
        m = weights.shape[1]
        key = np.concatenate([support.reshape(len(weights), -1), weights], axis=1)
        _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
        inv = inv.ravel()
        us, uw = support[first], weights[first]
        interp = grid.interp_matrix(us.reshape(-1, model.state_dim))
        spread = sparse.csr_matrix(
            (uw.ravel(), (np.repeat(np.arange(len(first)), m), np.arange(len(first) * m))),
            shape=(len(first), len(first) * m),
        )
        self.kernel_rows = (spread @ interp).tocsr()
        self.kernel_support = us
        self.kernel_weights = uw
        n_flat = len(flat)
        self.qidx = inv[: n_flat * A].reshape(P, Nmax, 3, A)
        self.boundary_qidx = inv[n_flat * A:].reshape(P, A)

    @property
    def n_origins(self):
        return len(self.origins)

    def q_values(self, h):
        """``Qh`` for every deduplicated kernel row."""
        vals = h.values if isinstance(h, GridFunction) else np.asarray(h, dtype=float)
        if vals.ndim == 0:
            vals = np.full(self.grid.n_interior, float(vals))
        return self.kernel_rows @ vals

    def weights(self, alpha):
        return BundleWeights(self, alpha)


class BundleWeights:
    """Discount-dependent quadrature weights for a :class:`FlowBundle`."""

    def __init__(self, bundle, alpha):
        self.bundle, self.alpha = bundle, float(alpha)
        dt = np.broadcast_to(bundle.dt[:, :, None], bundle.lam.shape[:2] + (bundle.lam.shape[3],))
        lam3 = np.moveaxis(bundle.lam, 2, 3)  # (P, N, A, 3)
        node_w, jump_w, decay = interval_weights(alpha, lam3, dt, bundle.quad.rule)
        self.node_w = node_w  # (P, N, A, 3)
        self.jump_w = jump_w
        self.decay = decay  # (P, N, A)
        self.curly = node_w.sum(axis=3)
        self.cost_int = (node_w * np.moveaxis(bundle.cost, 2, 3)).sum(axis=3)
        self.qidx = np.moveaxis(bundle.qidx, 2, 3)
        # path-independent upper bound on the survival at the last node
        haz_min = np.where(bundle.mask, -np.log(np.maximum(decay, 1e-300)), np.inf).min(axis=2)
        self.survival_bound = np.exp(-haz_min.sum(axis=1))
        lam_floor = np.where(bundle.mask[..., None], lam3, np.inf).min(axis=(1, 2, 3))
        self.tail_rate = self.alpha + lam_floor

    def stage(self, rho, qv, with_cost=True):
        """Interval contributions ``(P, N, A)`` for ``-rho L + L f + G h``."""
        out = (self.jump_w * qv[self.qidx]).sum(axis=3) - rho * self.curly
        if with_cost:
            out = out + self.cost_int
        return np.where(self.bundle.mask, out, np.inf)

    def tail_bound(self, sup_integrand):
        """Per-origin bound on the truncated tail (zero on boundary-hitting paths)."""
        with np.errstate(divide="ignore"):
            tail = np.where(
                self.tail_rate > 0, self.survival_bound * sup_integrand / self.tail_rate, np.inf
            )
        return np.where(self.bundle.hits, 0.0, tail)
