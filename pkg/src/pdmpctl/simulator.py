"""Monte Carlo simulation of the controlled process under feedback selectors.

Trajectories advance in lockstep: every loop iteration draws one inter-jump
sojourn for each still-running trajectory.  Between jumps the controlled flow
from a post-jump state is deterministic, so the hazard and running-cost
integrals along it are tabulated once per (post-jump state, selector) on a
fine trapezoid grid and reused.  Jump times come from inverting the tabulated
hazard against an exponential draw.

Every trajectory owns a random stream derived from ``(seed, stream id)``, so
results do not depend on how trajectories are batched, and trajectories with
the same stream id under different selectors share their random numbers.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractViolation, DiagnosticError, ExplosionError
from .kernels import segment_search
from .model import flow_samples, hit_time
from .operators import QuadratureConfig


class PolicySet:
    """One or more feedback selectors on a common grid, as action tables."""

    def __init__(self, grid, interior, boundary):
        self.grid = grid
        self.interior = np.atleast_2d(np.asarray(interior, dtype=np.int64))
        self.boundary = np.asarray(boundary, dtype=np.int64).reshape(len(self.interior), -1)
        if self.interior.shape[1] != grid.n_interior:
            raise ContractViolation("policy table does not match the grid")

    @classmethod
    def from_selector(cls, sel):
        return cls(sel.grid, sel.interior_map[None, :], sel.boundary_map[None, :])

    @classmethod
    def from_selectors(cls, sels):
        return cls(sels[0].grid, np.stack([s.interior_map for s in sels]),
                   np.stack([s.boundary_map for s in sels]))

    def __len__(self):
        return len(self.interior)


@dataclass
class TrajectoryRecord:
    jump_times: np.ndarray
    post_jump_states: np.ndarray
    boundary_hit_flags: np.ndarray
    running_cost_integral: float
    boundary_cost_sum: float
    horizon: float
    jump_count: int
    cumulative_cost: np.ndarray = None

    @property
    def boundary_hits(self):
        return int(self.boundary_hit_flags.sum())


@dataclass
class CostEstimate:
    mean: float
    std_error: float
    replications: int
    horizon: float
    truncation_bias: float = 0.0
    seed: int = 0
    drift: Optional[float] = None
    checkpoints: Optional[np.ndarray] = None
    running_average: Optional[np.ndarray] = None

    def as_dict(self):
        d = {
            "mean": self.mean,
            "std_error": self.std_error,
            "replications": self.replications,
            "horizon": self.horizon,
            "truncation_bias": self.truncation_bias,
            "seed": self.seed,
        }
        if self.drift is not None:
            d["split_half_drift"] = self.drift
        return d


@dataclass
class ManyEstimates:
    means: np.ndarray
    std_errors: np.ndarray
    replications: int
    horizon: float


@dataclass
class SojournSample:
    time: float
    boundary: bool
    censored: bool


class _Streams:
    """Per-trajectory generators with block-buffered uniforms."""

    def __init__(self, seed, stream_ids, block=64):
        self.gens = [
            np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(s),))))
            for s in stream_ids
        ]
        self.block = block
        self.buf = np.empty((len(self.gens), block))
        self.pos = np.full(len(self.gens), block, dtype=np.int64)

    def draw(self, idx, k=2):
        need = idx[self.pos[idx] + k > self.block]
        for i in need:
            self.buf[i] = self.gens[i].random(self.block)
            self.pos[i] = 0
        p = self.pos[idx]
        out = self.buf[idx[:, None], p[:, None] + np.arange(k)[None, :]]
        self.pos[idx] = p + k
        return out


class Simulator:
    """Lockstep simulator for a model under a :class:`PolicySet`.

    ``quad`` supplies the node layout along each flow (the selector's action is
    read at the nodes and held in between) and the truncation horizon used for
    flows that never reach the boundary.  ``substeps`` fine trapezoid steps per
    node interval tabulate hazard and running cost.
    """

    def __init__(self, model, policies, quad=None, alpha=0.0, substeps=4,
                 explosion_guard=10**6, t_cap=None):
        self.model = model
        self.policies = policies
        self.grid = policies.grid
        self.quad = quad or QuadratureConfig()
        self.alpha = float(alpha)
        self.S = int(substeps)
        self.guard = int(explosion_guard)
        self.t_cap = t_cap if t_cap is not None else (self.quad.t_max or 50.0)
        self._sid = {}
        self._seg_of_state = []  # per state: (n_pol,) segment ids
        self._segs = []          # per segment: dict
        self._dirty = True
        self.truncation_restarts = 0

    # ---------------------------------------------------------- path tables

    def _state_id(self, x):
        key = np.asarray(x, float).tobytes()
        sid = self._sid.get(key)
        if sid is None:
            sid = len(self._seg_of_state)
            self._sid[key] = sid
            self._seg_of_state.append(self._build_state(np.asarray(x, float)))
            self._dirty = True
        return sid

    def _build_state(self, x):
        model, S = self.model, self.S
        ts = float(hit_time(model, x)[0])
        t_end = min(ts, self.t_cap)
        hits = bool(np.isfinite(ts) and t_end == ts)
        nodes = QuadratureConfig(self.quad.node_count, self.quad.rule).nodes(t_end)
        N = len(nodes) - 1
        dt = t_end / N
        hf = dt / S
        fine_t = np.arange(N * S + 1) * hf
        fine_t[-1] = t_end
        pos = flow_samples(model, x, fine_t)
        A = model.n_actions
        lam = model.on_actions(model.intensity, pos).T  # (A, nf)
        cost = model.on_actions(model.running_cost, pos).T
        left = pos[: N * S: S]
        near = self.grid.nearest_interior(left)
        acts = self.policies.interior[:, near]  # (n_pol, N)
        z = pos[-1]
        if hits and self.grid.n_boundary:
            bj = int(self.grid.nearest_boundary(z[None, :])[0])
            bact = self.policies.boundary[:, bj]
        else:
            bact = np.zeros(len(self.policies), dtype=np.int64)
        key = np.concatenate([acts, bact[:, None]], axis=1)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.ravel()
        ua = uniq[:, :N]
        # per unique action sequence: action at each fine step (left value)
        step_act = np.repeat(ua, S, axis=1)  # (U, N*S)
        cols = np.arange(N * S)
        lam_l = lam[step_act, cols]
        lam_r = lam[step_act, cols + 1]
        disc = np.exp(-self.alpha * fine_t)
        f_l = cost[step_act, cols] * disc[:-1]
        f_r = cost[step_act, cols + 1] * disc[1:]
        haz = np.concatenate([np.zeros((len(ua), 1)), np.cumsum(0.5 * hf * (lam_l + lam_r), axis=1)], axis=1)
        F = np.concatenate([np.zeros((len(ua), 1)), np.cumsum(0.5 * hf * (f_l + f_r), axis=1)], axis=1)
        base = len(self._segs)
        for u in range(len(ua)):
            self._segs.append({
                "haz": haz[u], "F": F[u], "hf": hf, "dt": dt, "N": N, "t_end": t_end,
                "hits": hits, "bact": int(uniq[u, N]), "acts": ua[u], "z": z, "x": x,
                "lam_max": float(lam.max()) if lam.size else 0.0,
            })
        return base + inv

    def _flatten(self):
        if not self._dirty:
            return
        segs = self._segs
        lens = np.array([len(s["haz"]) for s in segs])
        self.off = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
        self.haz = np.concatenate([s["haz"] for s in segs])
        self.F = np.concatenate([s["F"] for s in segs])
        self.hf = np.array([s["hf"] for s in segs])
        self.dtn = np.array([s["dt"] for s in segs])
        self.Nn = np.array([s["N"] for s in segs], dtype=np.int64)
        self.t_end = np.array([s["t_end"] for s in segs])
        self.hits = np.array([s["hits"] for s in segs])
        self.bact = np.array([s["bact"] for s in segs], dtype=np.int64)
        self.z = np.stack([s["z"] for s in segs])
        alens = np.array([len(s["acts"]) for s in segs])
        self.aoff = np.concatenate([[0], np.cumsum(alens)]).astype(np.int64)
        self.acts = np.concatenate([s["acts"] for s in segs]).astype(np.int64)
        self.seg_table = np.stack(self._seg_of_state)  # (n_states, n_pol)
        self._dirty = False

    def _segments_for(self, X, pol):
        uniq, inv = np.unique(X, axis=0, return_inverse=True)
        sids = np.array([self._state_id(u) for u in uniq])
        self._flatten()
        return self.seg_table[sids[inv.ravel()], pol]

    def _interp(self, table, seg, s):
        """Linear interpolation of a fine table at local time ``s``."""
        nf = self.off[seg + 1] - self.off[seg]
        q = np.minimum((s / self.hf[seg]).astype(np.int64), nf - 2)
        q = np.maximum(q, 0)
        fr = np.clip(s / self.hf[seg] - q, 0.0, 1.0)
        j = self.off[seg] + q
        return table[j] + fr * (table[j + 1] - table[j])

    # ----------------------------------------------------------------- core

    def run(self, x0, horizon, policy_index=None, stream_ids=None, seed=0, checkpoints=None,
            record=False):
        """Simulate trajectories up to ``horizon``.

        ``x0`` is one start state or one per trajectory.  Returns a dict with
        per-trajectory ``cost`` (discounted at the simulator's ``alpha``),
        ``jumps``, ``boundary_hits``, ``final_state`` and, when requested, costs
        at the ``checkpoints`` and event records.
        """
        model = self.model
        if policy_index is None:
            policy_index = np.zeros(len(stream_ids), dtype=np.int64)
        pol = np.asarray(policy_index, dtype=np.int64)
        n = len(pol)
        if stream_ids is None:
            stream_ids = np.arange(n)
        X0 = np.asarray(x0, float)
        X = np.broadcast_to(model.points(X0) if X0.ndim < 2 else X0, (n, model.state_dim)).copy()
        streams = _Streams(seed, stream_ids)
        seg = self._segments_for(X, pol)
        T = np.zeros(n)
        cost = np.zeros(n)
        jumps = np.zeros(n, dtype=np.int64)
        bhits = np.zeros(n, dtype=np.int64)
        bcost = np.zeros(n)
        active = np.ones(n, dtype=bool)
        final = X.copy()
        ck = np.asarray(checkpoints if checkpoints is not None else [], float)
        ck_cost = np.full((n, len(ck)), np.nan)
        ck_ptr = np.zeros(n, dtype=np.int64)
        events = [[] for _ in range(n)] if record else None
        a = self.alpha
        H = float(horizon)
        while active.any():
            idx = np.nonzero(active)[0]
            u = streams.draw(idx, 2)
            E = -np.log1p(-u[:, 0])
            sg = seg[idx]
            haz_end = self.haz[self.off[sg + 1] - 1]
            jump = E < haz_end
            s = self.t_end[sg].copy()
            if jump.any():
                jj = segment_search(self.off, self.haz, sg[jump], E[jump])
                h0 = self.haz[jj]
                h1 = self.haz[jj + 1]
                dh = h1 - h0
                fr = np.where(dh > 0, (E[jump] - h0) / np.where(dh > 0, dh, 1.0), 0.0)
                local = jj - self.off[sg[jump]]
                s[jump] = np.minimum((local + fr) * self.hf[sg[jump]], self.t_end[sg[jump]])
            Ti = T[idx]
            over = Ti + s >= H
            s_eff = np.where(over, H - Ti, s)
            disc0 = np.exp(-a * Ti) if a else 1.0
            if len(ck):
                self._checkpoints(idx, sg, Ti, s_eff, cost, ck, ck_ptr, ck_cost, disc0)
            cost[idx] += disc0 * self._interp(self.F, sg, s_eff)
            # finished trajectories
            if over.any():
                fi = idx[over]
                final[fi] = model.flow(X[fi], s_eff[over])
                T[fi] = H
                active[fi] = False
            go = ~over
            if not go.any():
                break
            gi, gs, gsg = idx[go], s[go], sg[go]
            T[gi] += gs
            gjump = jump[go]
            at_bd = (~gjump) & self.hits[gsg]
            trunc = (~gjump) & (~self.hits[gsg])
            # pre-jump state and action
            pre = np.empty((len(gi), model.state_dim))
            act = np.empty(len(gi), dtype=np.int64)
            if gjump.any():
                jm = gjump
                pre[jm] = model.flow(X[gi[jm]], gs[jm])
                k = np.minimum((gs[jm] / self.dtn[gsg[jm]]).astype(np.int64), self.Nn[gsg[jm]] - 1)
                act[jm] = self.acts[self.aoff[gsg[jm]] + k]
            if at_bd.any():
                pre[at_bd] = self.z[gsg[at_bd]]
                act[at_bd] = self.bact[gsg[at_bd]]
                bi = gi[at_bd]
                r = model.boundary_cost(pre[at_bd], model.actions[act[at_bd]])
                rc = (np.exp(-a * T[bi]) if a else 1.0) * r
                cost[bi] += rc
                bcost[bi] += rc
                bhits[bi] += 1
            newX = np.empty_like(pre)
            if trunc.any():
                newX[trunc] = self.z[gsg[trunc]]
                self.truncation_restarts += int(trunc.sum())
            real = ~trunc
            if real.any():
                support, weights = model.kernel(pre[real], model.actions[act[real]])
                cum = np.cumsum(weights, axis=1)
                target = u[go, 1][real] * cum[:, -1]
                pick = np.minimum((cum <= target[:, None]).sum(axis=1), weights.shape[1] - 1)
                newX[real] = support[np.arange(len(pick)), pick]
                ji = gi[real]
                jumps[ji] += 1
                if jumps[ji].max() > self.guard:
                    raise ExplosionError(
                        f"more than {self.guard} jumps: jump times accumulate",
                        guard=self.guard,
                    )
            X[gi] = newX
            if record:
                for t_i, i, flag, trn in zip(T[gi], gi, at_bd, trunc):
                    if not trn:
                        events[i].append((t_i, bool(flag), X[i].copy(), cost[i]))
            seg[gi] = self._segments_for(newX, pol[gi])
        out = {"cost": cost, "jumps": jumps, "boundary_hits": bhits, "final_state": final,
               "boundary_cost": bcost,
               "checkpoint_cost": ck_cost, "horizon": H}
        if record:
            out["events"] = events
        return out

    def _checkpoints(self, idx, sg, Ti, s_eff, cost, ck, ck_ptr, ck_cost, disc0):
        disc0 = np.broadcast_to(disc0, Ti.shape)
        while True:
            p = ck_ptr[idx]
            valid = p < len(ck)
            if not valid.any():
                return
            c = np.where(valid, ck[np.minimum(p, len(ck) - 1)], np.inf)
            hit = valid & (c <= Ti + s_eff)
            if not hit.any():
                return
            hi = idx[hit]
            val = cost[hi] + disc0[hit] * self._interp(self.F, sg[hit], c[hit] - Ti[hit])
            ck_cost[hi, p[hit]] = val
            ck_ptr[hi] += 1

    # ----------------------------------------------------------- estimators

    def cost_cap(self):
        """Rough upper bound on the cost rate, used to size discounted horizons."""
        g = self.grid
        fmax = float(np.max(self.model.on_actions(self.model.running_cost, g.points)))
        lmax = float(np.max(self.model.on_actions(self.model.intensity, g.points)))
        rmax = 0.0
        if g.n_boundary:
            rmax = float(np.max(self.model.on_actions(self.model.boundary_cost, g.boundary_points)))
        tmin = float(np.min(g.hit_times))
        return fmax + rmax * (lmax + (1.0 / tmin if np.isfinite(tmin) else 0.0))

    def discounted_horizon(self, target_se=1e-3):
        if not self.alpha > 0:
            raise ContractViolation("discounted estimates need alpha > 0")
        cap = max(self.cost_cap(), 1e-12)
        return max(1.0, float(np.log(cap / (self.alpha * 0.1 * target_se)) / self.alpha)), cap

    def estimate_discounted(self, x, n_traj, seed=0, target_se=1e-3, policy=0):
        H, cap = self.discounted_horizon(target_se)
        out = self.run(x, H, policy_index=np.full(n_traj, policy), seed=seed)
        c = out["cost"]
        bias = float(np.exp(-self.alpha * H) * cap / self.alpha)
        return CostEstimate(float(c.mean()), float(c.std(ddof=1) / np.sqrt(n_traj)) if n_traj > 1 else 0.0,
                            n_traj, H, bias, seed)

    def estimate_average(self, x, horizon, n_traj, seed=0, policy=0, n_checkpoints=20):
        ck = np.linspace(horizon / n_checkpoints, horizon, n_checkpoints)
        ck = np.unique(np.concatenate([ck, [horizon / 2]]))
        out = self.run(x, horizon, policy_index=np.full(n_traj, policy), seed=seed, checkpoints=ck)
        avg = out["cost"] / horizon
        half = out["checkpoint_cost"][:, np.searchsorted(ck, horizon / 2)]
        first = half / (horizon / 2)
        second = (out["cost"] - half) / (horizon / 2)
        se = float(avg.std(ddof=1) / np.sqrt(n_traj)) if n_traj > 1 else 0.0
        run_avg = np.nanmean(out["checkpoint_cost"], axis=0) / ck
        return CostEstimate(float(avg.mean()), se, n_traj, float(horizon), 0.0, seed,
                            float(second.mean() - first.mean()), ck, run_avg)

    def _many(self, x, horizon, reps, seed, chunk):
        n_pol = len(self.policies)
        means = np.empty(n_pol)
        ses = np.empty(n_pol)
        per = max(1, chunk // max(reps, 1))
        for lo in range(0, n_pol, per):
            hi = min(n_pol, lo + per)
            pol = np.repeat(np.arange(lo, hi), reps)
            streams = np.tile(np.arange(reps), hi - lo)
            c = self.run(x, horizon, policy_index=pol, stream_ids=streams, seed=seed)["cost"]
            c = c.reshape(hi - lo, reps)
            means[lo:hi] = c.mean(axis=1)
            ses[lo:hi] = c.std(axis=1, ddof=1) / np.sqrt(reps) if reps > 1 else 0.0
        return means, ses

    def discounted_many(self, x, alpha, reps, seed=0, target_se=1e-3, chunk=65536):
        """Discounted cost from ``x`` under every policy, common random numbers across policies."""
        if alpha != self.alpha:
            return Simulator(self.model, self.policies, self.quad, alpha, self.S, self.guard,
                             self.t_cap).discounted_many(x, alpha, reps, seed, target_se, chunk)
        H, _ = self.discounted_horizon(target_se)
        m, s = self._many(x, H, reps, seed, chunk)
        return ManyEstimates(m, s, reps, H)

    def average_many(self, x, horizon, reps, seed=0, chunk=65536):
        m, s = self._many(x, horizon, reps, seed, chunk)
        return ManyEstimates(m / horizon, s / horizon, reps, horizon)

    def terminal_states(self, x, horizon, reps, seed=0):
        return self.run(x, horizon, policy_index=np.zeros(reps, np.int64), seed=seed)["final_state"]

    def sojourn(self, x, eps):
        """Sojourn time from ``x`` for exponential draws ``eps`` (policy 0)."""
        X = np.broadcast_to(self.model.points(x), (len(eps), self.model.state_dim))
        seg = self._segments_for(np.ascontiguousarray(X), np.zeros(len(eps), np.int64))
        eps = np.asarray(eps, float)
        haz_end = self.haz[self.off[seg + 1] - 1]
        jump = eps < haz_end
        s = self.t_end[seg].copy()
        if jump.any():
            jj = segment_search(self.off, self.haz, seg[jump], eps[jump])
            dh = self.haz[jj + 1] - self.haz[jj]
            fr = np.where(dh > 0, (eps[jump] - self.haz[jj]) / np.where(dh > 0, dh, 1.0), 0.0)
            s[jump] = (jj - self.off[seg[jump]] + fr) * self.hf[seg[jump]]
        boundary = (~jump) & self.hits[seg]
        censored = (~jump) & (~self.hits[seg])
        return s, boundary, censored


# ----------------------------------------------------------- public wrappers


def sample_sojourn(model, x, selector, rng, quad=None, lambda_lower=None):
    """One sojourn from ``x``: ``(time, boundary flag, censored flag)``.

    A censored draw (no jump before the truncation horizon of a flow that never
    exits) while ``lambda_lower`` is positive along the path contradicts the
    integrability hypothesis and raises :class:`DiagnosticError`.
    """
    sim = Simulator(model, PolicySet.from_selector(selector), quad)
    eps = float(rng.exponential())
    s, b, c = sim.sojourn(x, np.array([eps]))
    if c[0] and lambda_lower is not None:
        seg = sim._segments_for(model.points(x), np.zeros(1, np.int64))[0]
        pts = flow_samples(model, np.asarray(x, float).reshape(-1),
                           np.linspace(0, sim.t_end[seg], 64))
        if np.min(lambda_lower(pts)) > 0:
            raise DiagnosticError("censored sojourn although the lower intensity is positive")
    return SojournSample(float(s[0]), bool(b[0]), bool(c[0]))


def simulate_trajectory(model, x, selector, horizon, seed=0, quad=None, explosion_guard=10**6):
    """Full event record of one trajectory up to ``horizon``."""
    sim = Simulator(model, PolicySet.from_selector(selector), quad,
                    explosion_guard=explosion_guard)
    out = sim.run(x, horizon, policy_index=np.zeros(1, np.int64), seed=seed, record=True)
    ev = out["events"][0]
    times = np.array([e[0] for e in ev])
    states = np.array([e[2] for e in ev]).reshape(len(ev), model.state_dim)
    flags = np.array([e[1] for e in ev], dtype=bool)
    cum = np.array([e[3] for e in ev])
    bsum = float(out["boundary_cost"][0])
    total = float(out["cost"][0])
    return TrajectoryRecord(times, states, flags, total - bsum, bsum,
                            float(horizon), int(out["jumps"][0]), cum)


def estimate_discounted_cost(model, x, selector, alpha, n_traj, seed=0, quad=None, target_se=1e-3):
    sim = Simulator(model, PolicySet.from_selector(selector), quad, alpha=alpha)
    return sim.estimate_discounted(x, n_traj, seed, target_se)


def estimate_average_cost(model, x, selector, horizon, n_traj, seed=0, quad=None):
    sim = Simulator(model, PolicySet.from_selector(selector), quad)
    return sim.estimate_average(x, horizon, n_traj, seed)
