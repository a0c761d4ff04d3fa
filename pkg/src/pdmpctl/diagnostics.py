"""Runtime checks of the growth, integrability and ergodicity hypotheses."""
from dataclasses import dataclass, field

import numpy as np

from .errors import DiagnosticError
from .model import ErgodicityWitness, GridFunction, directional_derivatives, flow_samples
from .onestage import OneStageOperator, _q_all_actions
from .operators import interval_weights


@dataclass
class InequalityReport:
    name: str
    max_slack: float
    n_checked: int
    violations: list = field(default_factory=list)  # worst first: (point, action, slack)

    @property
    def passed(self):
        return not self.violations

    def as_dict(self):
        return {
            "name": self.name,
            "max_slack": self.max_slack,
            "n_checked": self.n_checked,
            "passed": self.passed,
            "violations": [
                {"point": list(map(float, p)), "action": a, "slack": s}
                for p, a, s in self.violations
            ],
        }


@dataclass
class CheckReport:
    items: dict
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return all(it.passed for it in self.items.values())

    def as_dict(self):
        return {
            "passed": self.passed,
            "items": {k: v.as_dict() for k, v in sorted(self.items.items())},
            "notes": list(self.notes),
        }


def _report(name, slack, points, mask, tol, actions=None, worst=10):
    slack = np.where(mask, slack, -np.inf)
    n = int(mask.sum())
    mx = float(slack.max()) if n else -np.inf
    bad = np.argwhere(slack > tol)
    order = np.argsort(-slack[tuple(bad.T)], kind="stable") if len(bad) else []
    viol = []
    for j in list(order)[:worst]:
        i, a = bad[j]
        act = int(a) if actions is None else float(actions[a])
        viol.append((points[i], act, float(slack[i, a])))
    return InequalityReport(name, mx, n, viol)


def growth_terms(model, witness, X):
    """Left-hand sides of the drift inequality and the cost domination, per action."""
    g = witness.g
    gx = np.asarray(g(X), dtype=float)
    drift, reduced = directional_derivatives(model, g, X)
    lam = model.on_actions(model.intensity, X)
    f = model.on_actions(model.running_cost, X)
    qg = _q_all_actions(model, g, X)
    lhs = drift[:, None] + witness.c * gx[:, None] - lam * (gx[:, None] - qg)
    return lhs, f, gx, reduced


def check_growth(model, witness, grid, check_tol=None):
    """Evaluate the four growth inequalities on grid points x actions."""
    tol = 1e-6 * max(witness.b, 1.0) if check_tol is None else check_tol
    X = grid.points
    mask = model.action_mask(X)
    lhs, f, gx, reduced = growth_terms(model, witness, X)
    items = {
        "drift": _report("drift", lhs - witness.b, X, mask, tol, model.actions),
        "cost": _report("cost", f - witness.M * gx[:, None], X, mask, tol, model.actions),
    }
    Z = grid.boundary_points
    if len(Z):
        bmask = model.action_mask(Z)
        gz = np.asarray(witness.g(Z), dtype=float)
        rb = np.asarray(witness.r_bar(Z), dtype=float)
        qg = _q_all_actions(model, witness.g, Z)
        r = model.on_actions(model.boundary_cost, Z)
        items["boundary_growth"] = _report(
            "boundary_growth", rb[:, None] + qg - gz[:, None], Z, bmask, tol, model.actions
        )
        items["boundary_cost"] = _report(
            "boundary_cost",
            r - witness.M / (witness.c + witness.delta) * rb[:, None],
            Z,
            bmask,
            tol,
            model.actions,
        )
    else:
        empty = np.zeros((0, model.n_actions))
        for name in ("boundary_growth", "boundary_cost"):
            items[name] = _report(name, empty, Z, empty.astype(bool), tol)
    notes = []
    if reduced.any():
        notes.append(f"{int(reduced.sum())} points used the one-sided first-order derivative")
    return CheckReport(items, notes)


def calibration_points(model, grid, quad, n_times=40):
    """Grid points plus flow images used to calibrate witness constants."""
    X = [grid.points]
    ts = grid.hit_times
    horizon = quad.horizon(ts)
    fr = np.concatenate([np.linspace(0, 1, n_times + 1)[1:-1], 1 - np.geomspace(1e-6, 0.5, 8)])
    for i, x in enumerate(grid.points):
        times = np.unique(np.clip(fr * horizon[i], 0, horizon[i]))
        if not np.isfinite(ts[i]):
            times = np.unique(np.concatenate([times, np.geomspace(1e-3, horizon[i], n_times)]))
        else:
            times = times[times < ts[i] - 3 * model.fd_step]
        if len(times):
            X.append(flow_samples(model, x, times))
    X = np.concatenate(X)
    inside = np.asarray(model.interior_test(X), dtype=bool)
    return X[inside]


def calibrate_growth(model, grid, quad, g, r_bar, c, delta):
    """Smallest ``b`` and ``M`` that make the growth inequalities hold.

    ``b`` is the largest drift left-hand side and ``M`` the largest ratio
    ``f / g`` (or ``(c + delta) r / r_bar`` at boundary points), both taken over
    the grid and sampled flow points.
    """
    from .model import GrowthWitness

    X = calibration_points(model, grid, quad)
    probe = GrowthWitness(g, r_bar, 0.0, c, delta, 0.0)
    lhs, f, gx, _ = growth_terms(model, probe, X)
    mask = model.action_mask(X)
    b = float(max(0.0, np.where(mask, lhs, -np.inf).max()))
    M = float(np.where(mask, f / gx[:, None], -np.inf).max())
    Z = grid.boundary_points
    if len(Z):
        r = model.on_actions(model.boundary_cost, Z)
        rb = np.asarray(r_bar(Z), dtype=float)
        bmask = model.action_mask(Z)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(r > 0, (c + delta) * r / rb[:, None], 0.0)
        M = max(M, float(np.where(bmask, ratio, -np.inf).max()))
    return GrowthWitness(g, r_bar, b, c, delta, max(M, 0.0))


# ------------------------------------------------------------ integrability


def _lower_rate_integrals(model, witness8, c, x, quad, t_scan):
    """Quadrature data along the flow from ``x`` driven by the lower intensity."""
    ts = float(model.hit_time(model.points(x))[0])
    t_end = ts if np.isfinite(ts) else t_scan
    nodes = quad.nodes(t_end)
    dt = np.diff(nodes)
    times = (nodes[:-1, None] + np.array([0.0, 0.5, 1.0]) * dt[:, None]).ravel()
    pts = flow_samples(model, x, times)
    lam3 = np.asarray(witness8.lambda_lower(pts), float).reshape(-1, 3)
    fbar3 = np.asarray(witness8.f_upper(pts), float).reshape(-1, 3)
    node_c, _, dec_c = interval_weights(-c, lam3, dt, quad.rule)
    node_0, _, dec_0 = interval_weights(0.0, lam3, dt, quad.rule)
    surv_c = np.concatenate([[1.0], np.cumprod(dec_c)])
    surv_0 = np.concatenate([[1.0], np.cumprod(dec_0)])
    return {
        "finite": np.isfinite(ts),
        "t_end": t_end,
        "int_b": float((surv_c[:-1, None] * node_c).sum()),
        "int_e": float((surv_0[:-1, None] * node_0 * fbar3).sum()),
        "weight_c": surv_c,
        "weight_0": surv_0,
        "lam_tail": float(lam3[-max(1, len(lam3) // 10):].min()),
        "fbar_tail": float(fbar3[-max(1, len(fbar3) // 10):].max()),
        "end_point": pts[-1],
    }


def lower_rate_integral(model, witness8, c, x, quad, t_scan=50.0):
    """Integral of ``exp(c t - int lambda_lower)`` up to the hit time, with its tail bound."""
    d = _lower_rate_integrals(model, witness8, c, x, quad, t_scan)
    if d["finite"]:
        return d["int_b"], 0.0
    rate = d["lam_tail"] - c
    tail = d["weight_c"][-1] / rate if rate > 0 else np.inf
    return d["int_b"], tail


def estimate_K_lambda(model, witness8_partial, c, grid, quad, t_scan=50.0, margin=1e-6):
    vals = []
    for x in grid.points:
        v, tail = lower_rate_integral(model, witness8_partial, c, x, quad, t_scan)
        vals.append(v + tail)
    return float(max(vals) * (1 + margin))


def check_hyp8a(model, witness8, c, grid, quad, g=None, t_scan=50.0, decay_tol=1e-6):
    """Pointwise domination, the integral bound and the tail conditions."""
    X = grid.points
    mask = model.action_mask(X)
    lam = model.on_actions(model.intensity, X)
    f = model.on_actions(model.running_cost, X)
    ll = np.asarray(witness8.lambda_lower(X), float)
    fu = np.asarray(witness8.f_upper(X), float)
    items = {
        "a_intensity": _report("a_intensity", ll[:, None] - lam, X, mask, 1e-12, model.actions),
        "a_cost": _report("a_cost", f - fu[:, None], X, mask, 1e-12, model.actions),
    }
    slack_b, slack_c, slack_d, slack_e = [], [], [], []
    for x in X:
        d = _lower_rate_integrals(model, witness8, c, x, quad, t_scan)
        if d["finite"]:
            slack_b.append(d["int_b"] - witness8.K_lambda)
            slack_c.append(-np.inf)
            slack_d.append(-np.inf)
            slack_e.append(-np.inf if np.isfinite(d["int_e"]) else np.inf)
            continue
        rate = d["lam_tail"] - c
        tail_b = d["weight_c"][-1] / rate if rate > 0 else np.inf
        slack_b.append(d["int_b"] + tail_b - witness8.K_lambda)
        # (c) the weight must have decayed and keep decaying
        wc = d["weight_c"]
        decaying = rate > 0 and wc[-1] <= wc[len(wc) // 2]
        slack_c.append(wc[-1] - decay_tol if decaying else np.inf)
        if g is not None:
            gd = d["weight_0"][-1] * float(np.asarray(g(d["end_point"][None, :]))[0])
            slack_d.append(gd - decay_tol)
        else:
            slack_d.append(-np.inf)
        tail_e = d["weight_0"][-1] * d["fbar_tail"] / d["lam_tail"] if d["lam_tail"] > 0 else np.inf
        slack_e.append(-np.inf if np.isfinite(d["int_e"] + tail_e) else np.inf)
    ones = np.ones((len(X), 1), dtype=bool)
    for name, s in (("b_integral", slack_b), ("c_decay", slack_c),
                    ("d_weighted_decay", slack_d), ("e_cost_integral", slack_e)):
        items[name] = _report(name, np.asarray(s, float)[:, None], X, ones, 1e-9)
    return CheckReport(items)


# -------------------------------------------------------------- ergodicity


def default_probes(grid, g):
    """``g`` and three oscillating g-bounded probes."""
    gv = g.values if isinstance(g, GridFunction) else np.asarray(g(grid.points), float)
    lo = grid.points.min(axis=0)
    hi = grid.points.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    s = ((grid.points - lo) / span).mean(axis=1)
    probes = [gv]
    for k in (1, 2, 3):
        probes.append(np.cos(k * np.pi * s) * gv)
    return probes


def power_iterates(G, h, K):
    out = [np.asarray(h, float)]
    for _ in range(K):
        out.append(G @ out[-1])
    return np.array(out)


def two_iterate_contraction(G, h, gv, nu, noise_floor=1e-11, kappa_floor=1e-3):
    """``|G^2 h - nu|_g / |G h - nu|_g`` with deviations below the noise floor read as zero."""
    it = power_iterates(G, h, 2)
    scale = np.max(np.abs(h) / gv)
    e1 = np.max(np.abs(it[1] - nu) / gv) / scale
    e2 = np.max(np.abs(it[2] - nu) / gv) / scale
    if e1 <= noise_floor:
        return kappa_floor
    ratio = 0.0 if e2 <= noise_floor else e2 / e1
    return max(kappa_floor, ratio)


@dataclass
class ErgodicityReport:
    witness: ErgodicityWitness
    kappa_per_probe: list
    errors: list  # per probe, relative g-norm deviation per iterate
    nu: list
    max_violation: float
    noise_floor: float


def estimate_ergodicity(model, selector, grid, quad, g, probes=None, K=30,
                        noise_floor=1e-11, kappa_floor=1e-3, margin=1e-3, G=None):
    """Fit a geometric rate to the embedded post-jump chain under ``selector``.

    Returns the smallest ``a`` making ``|G^k h - nu(h)| <= a |h|_g kappa^k g`` hold
    on every observed iterate, together with the fitted ``kappa``.  Deviations at
    or below ``noise_floor`` (relative) are treated as converged.
    """
    if G is None:
        op = OneStageOperator(model, grid, quad, 0.0)
        G = op.evaluate_selector(selector).G
    gv = g.values if isinstance(g, GridFunction) else np.asarray(g(grid.points), float)
    probes = default_probes(grid, g) if probes is None else [
        p.values if isinstance(p, GridFunction) else np.asarray(p, float) for p in probes
    ]
    kappas, errs, nus, fits = [], [], [], []
    for h in probes:
        it = power_iterates(G, h, K)
        nu = float(it[-1].mean())
        scale = float(np.max(np.abs(h) / gv))
        if scale == 0:
            continue
        err = np.max(np.abs(it - nu) / gv[None, :], axis=1) / scale
        errs.append(err)
        nus.append(nu)
        ks = np.nonzero(err > noise_floor)[0]
        if len(ks) >= 2:
            slope, icpt = np.polyfit(ks, np.log(err[ks]), 1)
            resid = float(np.sqrt(np.mean((np.log(err[ks]) - (slope * ks + icpt)) ** 2)))
            kfit = float(np.exp(slope))
        else:
            kfit, resid = 0.0, 0.0
        kappas.append(max(kfit, kappa_floor))
        fits.append(resid)
    kappa = max(kappas)
    if kappa >= 1 - margin:
        raise DiagnosticError("no geometric contraction detected", kappa=kappa)
    a = 0.0
    for err in errs:
        ks = np.nonzero(err > noise_floor)[0]
        if len(ks):
            a = max(a, float(np.max(err[ks] / kappa ** ks.astype(float))))
    a = max(a, 1e-12)
    worst = 0.0
    for err in errs:
        k = np.arange(len(err), dtype=float)
        bound = a * kappa ** k
        worst = max(worst, float(np.max(err - bound - noise_floor)))
    nu_g = nus[0] if nus else 0.0
    w = ErgodicityWitness(a, kappa, nu_g, float(max(fits) if fits else 0.0))
    return ErgodicityReport(w, kappas, errs, nus, worst, noise_floor)


# ------------------------------------------------------------------- ACOI


@dataclass
class AcoiReport:
    residual: np.ndarray
    min_residual: float
    mean_residual: float
    worst_point: np.ndarray
    tol: float

    @property
    def passed(self):
        return self.min_residual >= -self.tol

    def as_dict(self):
        return {
            "min_residual": self.min_residual,
            "mean_residual": self.mean_residual,
            "worst_point": self.worst_point.tolist(),
            "tol": self.tol,
            "passed": self.passed,
        }


def acoi_residual(model, grid, quad, rho, h, op=None):
    op = op or OneStageOperator(model, grid, quad, 0.0)
    hv = h.values if isinstance(h, GridFunction) else np.asarray(h, float)
    return hv - op.apply(rho, hv).values


def check_acoi(model, grid, quad, rho, h, g, acoi_tol=None, op=None):
    hv = h.values if isinstance(h, GridFunction) else np.asarray(h, float)
    gv = g.values if isinstance(g, GridFunction) else np.asarray(g(grid.points), float)
    tol = 1e-3 * (1 + float(np.max(np.abs(hv) / gv))) if acoi_tol is None else acoi_tol
    res = acoi_residual(model, grid, quad, rho, hv, op)
    i = int(np.argmin(res))
    return AcoiReport(res, float(res[i]), float(res.mean()), grid.points[i], tol)


# --------------------------------------------------------- operator checks


def operator_bound_slack(model, grid, quad, witness, selector, alpha, op=None):
    """``g + b curlyL - (c + alpha) L g - H r_bar - G g`` per grid point."""
    op = op or OneStageOperator(model, grid, quad, alpha, min_alpha=-witness.c)
    pe = op.evaluate_selector(selector)
    g = witness.g
    gv = np.asarray(g(grid.points), float)
    lhs = gv + witness.b * pe.curly
    rhs = (witness.c + alpha) * pe.L(lambda X, a: g(X)) + pe.H(lambda Z, a: witness.r_bar(Z))
    rhs = rhs + pe.G @ gv
    return lhs - rhs
