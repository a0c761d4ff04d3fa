"""TOML run configuration: a built-in model plus overrides.

A configuration names a built-in model and may override its grid, action
values, kernel support, constant costs, witness constants and numeric
tolerances::

    [model]
    benchmark = "A"
    actions = [0.5, 1.0, 2.0]        # optional

    [grid]
    lower = 0.01
    upper = 0.99
    count = 99

    [witness]
    M = 1.8                          # any of b, c, delta, M, K_lambda

    [numerics]
    node_count = 100
    vi_tol = 1e-8

Unknown sections or keys are rejected so typos do not pass silently.
"""
from dataclasses import dataclass, replace
import hashlib
import json
import sys

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .benchmarks import _uniform_kernel, get_benchmark
from .diagnostics import calibrate_growth, estimate_K_lambda
from .errors import ConfigError, PdmpError
from .model import Hyp8aWitness, StateGrid
from .operators import QuadratureConfig

_KEYS = {
    "model": {"benchmark", "actions", "kernel_support", "running_cost", "boundary_cost"},
    "grid": {"lower", "upper", "count"},
    "witness": {"b", "c", "delta", "M", "K_lambda"},
    "numerics": {"node_count", "rule", "t_max", "tail_tol", "vi_tol", "check_tol", "acoi_tol",
                 "schedule_terms"},
    "solve": {"alpha", "x0"},
    "simulate": {"horizon", "reps", "seed", "alpha", "substeps"},
}

_DEFAULTS = {
    "numerics": {"vi_tol": 1e-8, "schedule_terms": 12},
    "solve": {"alpha": 0.5},
    "simulate": {"horizon": 1000.0, "reps": 200, "seed": 0, "substeps": 4},
}


@dataclass
class RunConfig:
    raw: dict
    bench: object
    model: object
    grid: object
    quad: QuadratureConfig
    witness: object
    hyp8a: object
    numerics: dict
    solve: dict
    simulate: dict

    def digest(self):
        """Hash of the resolved configuration and grid."""
        h = hashlib.sha256()
        h.update(json.dumps(self.raw, sort_keys=True, default=str).encode())
        h.update(self.grid.digest().encode())
        return h.hexdigest()[:16]


def _validate(raw):
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a table")
    for sec, body in raw.items():
        if sec not in _KEYS:
            raise ConfigError(f"unknown section [{sec}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table")
        extra = set(body) - _KEYS[sec]
        if extra:
            raise ConfigError(f"unknown keys in [{sec}]: {', '.join(sorted(extra))}")
    if "benchmark" not in raw.get("model", {}):
        raise ConfigError("[model] needs a 'benchmark' id")


def _num(sec, key, value, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"[{sec}] {key} must be a number")
    if positive and not value > 0:
        raise ConfigError(f"[{sec}] {key} must be positive")
    return value


def load(path):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    return resolve(raw)


def loads(text):
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    return resolve(raw)


def resolve(raw):
    """Build model, grid, quadrature and witnesses from a parsed table."""
    _validate(raw)
    m = raw["model"]
    bench = get_benchmark(str(m["benchmark"]))
    model = bench.model
    changed = False
    if "actions" in m:
        acts = np.asarray([_num("model", "actions", a, positive=True) for a in m["actions"]], float)
        if len(acts) == 0:
            raise ConfigError("[model] actions must be nonempty")
        model = replace(model, actions=acts)
        changed = True
    if "kernel_support" in m:
        pts = [_num("model", "kernel_support", p) for p in m["kernel_support"]]
        if not len(pts) or not np.all(model.interior_test(np.asarray(pts, float)[:, None])):
            raise ConfigError("[model] kernel_support must be interior points")
        model = replace(model, kernel=_uniform_kernel(pts))
        changed = True
    for key, attr in (("running_cost", "running_cost"), ("boundary_cost", "boundary_cost")):
        if key in m:
            c0 = float(_num("model", key, m[key]))
            if c0 < 0:
                raise ConfigError(f"[model] {key} must be nonnegative")
            model = replace(model, **{attr: (lambda c: lambda X, a: np.full(len(X), c))(c0)})
            changed = True
    if changed:
        model = replace(model, name=model.name + "+" + hashlib.sha256(
            json.dumps(m, sort_keys=True).encode()).hexdigest()[:8])

    grid = bench.grid if not changed else StateGrid(model, bench.grid.axes)
    if "grid" in raw:
        gs = raw["grid"]
        try:
            lo = float(_num("grid", "lower", gs["lower"]))
            hi = float(_num("grid", "upper", gs["upper"]))
            n = int(_num("grid", "count", gs["count"], positive=True))
        except KeyError as exc:
            raise ConfigError(f"[grid] needs {exc.args[0]}") from None
        if not hi > lo or n < 2:
            raise ConfigError("[grid] needs upper > lower and count >= 2")
        try:
            grid = StateGrid(model, [np.round(np.linspace(lo, hi, n), 12)])
        except Exception as exc:
            raise ConfigError(f"invalid grid: {exc}") from None
        changed = True

    num = dict(_DEFAULTS["numerics"])
    num.update(raw.get("numerics", {}))
    q = bench.quad
    rule = str(num.get("rule", q.rule))
    if rule not in ("simpson", "trapezoid"):
        raise ConfigError("[numerics] rule must be 'simpson' or 'trapezoid'")
    try:
        quad = QuadratureConfig(
            node_count=int(_num("numerics", "node_count", num.get("node_count", q.node_count),
                                positive=True)),
            rule=rule,
            t_max=num.get("t_max", q.t_max),
            tail_tol=float(_num("numerics", "tail_tol", num.get("tail_tol", q.tail_tol),
                                positive=True)),
        )
    except PdmpError as exc:
        raise ConfigError(f"invalid numerics: {exc}") from None

    witness, hyp8a = bench.witness, bench.hyp8a
    if changed:
        witness = calibrate_growth(model, grid, quad, witness.g, witness.r_bar, witness.c,
                                   witness.delta)
        if np.isfinite(hyp8a.K_lambda):
            K = estimate_K_lambda(model, Hyp8aWitness(hyp8a.lambda_lower, hyp8a.f_upper, 0.0),
                                  witness.c, grid, quad)
            hyp8a = Hyp8aWitness(hyp8a.lambda_lower, hyp8a.f_upper, K)
    wo = raw.get("witness", {})
    if wo:
        upd = {k: float(_num("witness", k, v)) for k, v in wo.items() if k != "K_lambda"}
        try:
            witness = replace(witness, **upd)
        except Exception as exc:
            raise ConfigError(f"invalid witness: {exc}") from None
        if "K_lambda" in wo:
            hyp8a = Hyp8aWitness(hyp8a.lambda_lower, hyp8a.f_upper,
                                 float(_num("witness", "K_lambda", wo["K_lambda"])))

    solve = dict(_DEFAULTS["solve"])
    solve.update(raw.get("solve", {}))
    sim = dict(_DEFAULTS["simulate"])
    sim.update(raw.get("simulate", {}))
    return RunConfig(raw, bench, model, grid, quad, witness, hyp8a, num, solve, sim)


def builtin_text(bench_id):
    """Minimal configuration text for a built-in model."""
    return f'[model]\nbenchmark = "{bench_id}"\n'


def g_values(cfg, X):
    return np.asarray(cfg.witness.g(np.asarray(X, float)), float)


__all__ = ["RunConfig", "load", "loads", "resolve", "builtin_text", "g_values"]
