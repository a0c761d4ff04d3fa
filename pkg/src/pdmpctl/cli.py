"""Command-line front end: ``pdmpctl {check,solve,simulate,oracle} CONFIG``.

Exit status is 0 on success, 1 when a computation or check fails and 2 for
usage errors (bad arguments, unreadable or malformed configuration, a policy
archive built for another model or grid).  ``PDMP_SEED`` overrides ``--seed``.
"""
import argparse
import os
import sys

import numpy as np

from . import config as cfgmod
from . import io
from .errors import ConfigError, ConvergenceError, DiagnosticError, PdmpError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _seed(args):
    env = os.environ.get("PDMP_SEED")
    if env is not None and env != "":
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"PDMP_SEED must be an integer, got {env!r}") from None
    return args.seed


def _out(args, name):
    return os.path.join(args.out, name)


def _x0_index(cfg, x0):
    if x0 is None:
        x0 = cfg.solve.get("x0")
    if x0 is None:
        return cfg.grid.centroid_index()
    return int(cfg.grid.nearest_interior(np.atleast_2d(np.asarray(x0, float)))[0])


# ------------------------------------------------------------------ check


def cmd_check(args):
    from .diagnostics import check_growth, check_hyp8a, estimate_ergodicity
    from .onestage import FeedbackSelector

    cfg = cfgmod.load(args.config)
    growth = check_growth(cfg.model, cfg.witness, cfg.grid, cfg.numerics.get("check_tol"))
    h8 = check_hyp8a(cfg.model, cfg.hyp8a, cfg.witness.c, cfg.grid, cfg.quad, g=cfg.witness.g)
    report = {
        "config_digest": cfg.digest(),
        "model": cfg.model.name,
        "witness": {"b": cfg.witness.b, "c": cfg.witness.c, "delta": cfg.witness.delta,
                    "M": cfg.witness.M, "K_lambda": cfg.hyp8a.K_lambda},
        "growth": growth.as_dict(),
        "integrability": h8.as_dict(),
    }
    ok = growth.passed and h8.passed
    if args.ergodicity:
        sel = FeedbackSelector.constant(cfg.grid, 0)
        try:
            er = estimate_ergodicity(cfg.model, sel, cfg.grid, cfg.quad, cfg.witness.g)
            report["ergodicity"] = {"a": er.witness.a_const, "kappa": er.witness.kappa,
                                    "nu_g": er.witness.nu_g, "max_violation": er.max_violation}
        except DiagnosticError as exc:
            report["ergodicity"] = {"error": str(exc)}
            ok = False
    report["passed"] = ok
    io.write_json(_out(args, "check.json"), report)
    rows = []
    for group, rep in (("growth", growth), ("integrability", h8)):
        for name, item in sorted(rep.items.items()):
            for p, a, s in item.violations:
                rows.append([group, name] + [float(v) for v in p] + [a, s])
    io.write_csv(_out(args, "violations.csv"),
                 ["group", "inequality"] + io.coord_names(cfg.model.state_dim) + ["action", "slack"],
                 rows)
    print(f"check {'passed' if ok else 'FAILED'}: {len(rows)} violations")
    for r in rows[:20]:
        print("  " + ", ".join(str(v) for v in r))
    return EXIT_OK if ok else EXIT_FAIL


# ------------------------------------------------------------------ solve


def _selector_dict(sel):
    return {"interior": sel.interior_map, "boundary": sel.boundary_map}


def cmd_solve(args):
    from .solvers import default_schedule, solve_average, solve_discounted

    cfg = cfgmod.load(args.config)
    tol = args.tol if args.tol is not None else float(cfg.numerics["vi_tol"])
    base = {"config_digest": cfg.digest(), "grid_digest": cfg.grid.digest(),
            "model": cfg.model.name, "mode": args.mode}
    g = cfg.witness.g(cfg.grid.points)
    try:
        if args.mode == "discounted":
            alpha = float(args.alpha if args.alpha is not None else cfg.solve["alpha"])
            sol = solve_discounted(cfg.model, alpha, cfg.grid, cfg.quad, vi_tol=tol, weight=g)
            arch = dict(base, alpha=alpha, residual=sol.residual, iterations=sol.iterations,
                        residual_trace=sol.residual_trace, value=sol.value.values,
                        selector=_selector_dict(sol.selector), rho_trace=[], acoi_residual=None)
            values, sel = sol.value.values, sol.selector
        else:
            sched = default_schedule(cfg.witness.c, int(cfg.numerics["schedule_terms"]))
            sol = solve_average(cfg.model, cfg.grid, cfg.quad, sched, g,
                                x0_index=_x0_index(cfg, args.x0), vi_tol=tol,
                                acoi_tol=cfg.numerics.get("acoi_tol"))
            arch = dict(base, alpha=0.0, rho=sol.rho, residual=sol.acoi_residual,
                        iterations=sum(d.iterations for d in sol.discounted),
                        value=sol.h.values, selector=_selector_dict(sol.selector),
                        rho_trace=[[a, r] for a, r in sol.rho_trace],
                        acoi_residual=sol.acoi_residual, acoi_tol=sol.acoi_tol,
                        x0=cfg.grid.points[sol.x0_index])
            values, sel = sol.h.values, sol.selector
    except (ConvergenceError, DiagnosticError) as exc:
        arch = dict(base, error=str(exc), **{k: v for k, v in exc.info.items()})
        io.write_json(_out(args, "solution.json"), arch)
        print(f"solve failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    io.write_json(_out(args, "solution.json"), arch)
    io.write_grid_function(_out(args, "value.csv"), cfg.grid, values)
    io.write_selector(_out(args, "selector.csv"), sel)
    io.write_csv(_out(args, "rho_trace.csv"), ["alpha", "rho"], arch["rho_trace"])
    if args.mode == "average":
        print(f"rho = {arch['rho']:.10g}  (acoi residual {arch['acoi_residual']:.3g})")
    else:
        print(f"alpha = {arch['alpha']}: {arch['iterations']} iterations, residual {arch['residual']:.3g}")
    return EXIT_OK


# --------------------------------------------------------------- simulate


def _policy(cfg, spec):
    from .onestage import FeedbackSelector

    if spec.startswith("builtin:"):
        k = spec.split(":", 1)[1]
        try:
            idx = int(k)
        except ValueError:
            raise UsageError(f"builtin policy needs an action index, got {k!r}") from None
        if not 0 <= idx < cfg.model.n_actions:
            raise UsageError(f"action index {idx} out of range")
        return FeedbackSelector.constant(cfg.grid, idx), None
    try:
        arch = io.read_json(spec)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read policy archive {spec}: {exc}") from None
    if arch.get("grid_digest") != cfg.grid.digest() or arch.get("model") != cfg.model.name:
        raise UsageError("policy archive was built for a different model or grid "
                         f"({arch.get('grid_digest')} != {cfg.grid.digest()})")
    sel = arch["selector"]
    return FeedbackSelector(cfg.grid, sel["interior"], sel["boundary"]), arch


def cmd_simulate(args):
    from .simulator import PolicySet, Simulator

    cfg = cfgmod.load(args.config)
    seed = _seed(args)
    if seed is None:
        seed = int(cfg.simulate["seed"])
    sel, arch = _policy(cfg, args.policy)
    horizon = float(args.horizon if args.horizon is not None else cfg.simulate["horizon"])
    reps = int(args.reps if args.reps is not None else cfg.simulate["reps"])
    alpha = args.alpha if args.alpha is not None else cfg.simulate.get("alpha")
    x0 = cfg.grid.points[_x0_index(cfg, args.x0)]
    sim = Simulator(cfg.model, PolicySet.from_selector(sel), cfg.quad,
                    alpha=float(alpha or 0.0), substeps=int(cfg.simulate["substeps"]))
    if alpha:
        est = sim.estimate_discounted(x0, reps, seed=seed)
        kind = "discounted"
    else:
        est = sim.estimate_average(x0, horizon, reps, seed=seed)
        kind = "average"
        io.write_csv(_out(args, "running_average.csv"), ["time", "running_average"],
                     zip(est.checkpoints, est.running_average))
    rec = dict(est.as_dict(), kind=kind, x0=x0, alpha=float(alpha or 0.0),
               config_digest=cfg.digest(), grid_digest=cfg.grid.digest(),
               policy=args.policy, policy_digest=sel.digest(),
               truncation_restarts=sim.truncation_restarts)
    if arch is not None and "rho" in arch:
        rec["rho"] = arch["rho"]
        rec["z_score"] = (est.mean - arch["rho"]) / est.std_error if est.std_error > 0 else 0.0
    if args.dump:
        from .simulator import simulate_trajectory

        rows = []
        for i in range(args.dump):
            tr = simulate_trajectory(cfg.model, x0, sel, horizon, seed=seed + i, quad=cfg.quad)
            for t, flag, y, c in zip(tr.jump_times, tr.boundary_hit_flags, tr.post_jump_states,
                                     tr.cumulative_cost):
                rows.append([i, t, int(flag)] + list(y) + [c])
        io.write_csv(_out(args, "trajectories.csv"),
                     ["trajectory", "T_i", "boundary_flag"]
                     + ["post_" + n for n in io.coord_names(cfg.model.state_dim)]
                     + ["cumulative_cost"], rows)
    io.write_json(_out(args, "estimate.json"), rec)
    print(f"{kind} cost = {est.mean:.8g} +/- {est.std_error:.3g} ({reps} replications, seed {seed})")
    return EXIT_OK


# ----------------------------------------------------------------- oracle


def cmd_oracle(args):
    from .benchmarks import oracle_average, oracle_discounted

    cfg = cfgmod.load(args.config)
    if cfg.model.name != cfg.bench.id or cfg.grid is not cfg.bench.grid:
        raise UsageError("oracles are defined for unmodified built-in models only")
    seed = _seed(args)
    seed = 0 if seed is None else seed
    jobs = args.jobs or os.cpu_count() or 1
    if args.kind == "discounted":
        x0 = cfg.grid.points[_x0_index(cfg, args.x0)] if args.x0 is None else np.atleast_1d(args.x0)
        alpha = float(args.alpha if args.alpha is not None else cfg.solve["alpha"])
        res = oracle_discounted(cfg.bench.id, x0, alpha, reps=args.reps or 32, seed=seed,
                                jobs=jobs, budget=args.budget)
        rec = dict(res.as_dict(), kind="discounted", alpha=alpha, x0=x0)
    else:
        res = oracle_average(cfg.bench.id, horizon=args.horizon or 100.0, reps=args.reps or 8,
                             seed=seed, jobs=jobs, budget=args.budget)
        rec = dict(res.as_dict(), kind="average")
    rec["config_digest"] = cfg.digest()
    io.write_json(_out(args, "oracle.json"), rec)
    io.write_csv(_out(args, "oracle_policies.csv"), ["policy", "mean", "std_error"],
                 zip(range(len(res.means)), res.means, res.std_errors))
    print(f"oracle minimum = {res.value:.8g} +/- {res.std_error:.3g} over {res.n_policies} policies")
    return EXIT_OK


# ------------------------------------------------------------------- main


def build_parser():
    p = argparse.ArgumentParser(prog="pdmpctl", description="Controlled PDMP solver and checker.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="TOML configuration file")
        sp.add_argument("--out", default=".", help="output directory")

    c = sub.add_parser("check", help="audit the model witnesses")
    common(c)
    c.add_argument("--ergodicity", action="store_true", help="also estimate the contraction rate")
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("solve", help="discounted or average-cost solve")
    common(s)
    s.add_argument("--mode", choices=["discounted", "average"], default="average")
    s.add_argument("--alpha", type=float)
    s.add_argument("--x0", type=float, nargs="+")
    s.add_argument("--tol", type=float)
    s.set_defaults(func=cmd_solve)

    m = sub.add_parser("simulate", help="Monte Carlo estimate under a policy")
    common(m)
    m.add_argument("--policy", default="builtin:0",
                   help="solution archive path or builtin:<action index>")
    m.add_argument("--horizon", type=float)
    m.add_argument("--reps", type=int)
    m.add_argument("--seed", type=int)
    m.add_argument("--alpha", type=float)
    m.add_argument("--x0", type=float, nargs="+")
    m.add_argument("--dump", type=int, default=0, help="write this many trajectory records")
    m.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", help="brute-force policy enumeration")
    common(o)
    o.add_argument("--kind", choices=["average", "discounted"], default="average")
    o.add_argument("--alpha", type=float)
    o.add_argument("--x0", type=float, nargs="+")
    o.add_argument("--reps", type=int)
    o.add_argument("--horizon", type=float)
    o.add_argument("--seed", type=int)
    o.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    o.add_argument("--budget", type=int, help="maximum number of policies")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"pdmpctl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PdmpError as exc:
        print(f"pdmpctl: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
