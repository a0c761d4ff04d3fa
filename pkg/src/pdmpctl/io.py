"""Deterministic JSON and CSV output.

Keys are sorted, floats are written in shortest round-trip form and
non-finite numbers become the strings ``"inf"``, ``"-inf"`` and ``"nan"``,
so identical inputs give byte-identical files.
"""
import csv
import json
import math
import os

import numpy as np


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(obj):
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    _ensure_dir(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    _ensure_dir(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _ensure_dir(path):
    d = os.path.dirname(os.fspath(path))
    if d:
        os.makedirs(d, exist_ok=True)


def coord_names(dim):
    return ["x"] if dim == 1 else [f"x{i}" for i in range(dim)]


def write_grid_function(path, grid, values, name="value"):
    """One row per interior grid point: coordinates then the value."""
    rows = [list(p) + [v] for p, v in zip(grid.points, np.asarray(values, float))]
    write_csv(path, coord_names(grid.model.state_dim) + [name], rows)


def write_selector(path, selector):
    """Interior and boundary action table of a feedback selector."""
    grid = selector.grid
    acts = grid.model.actions
    rows = [list(p) + [int(a), float(acts[a]), 0] for p, a in zip(grid.points, selector.interior_map)]
    rows += [list(z) + [int(a), float(acts[a]), 1]
             for z, a in zip(grid.boundary_points, selector.boundary_map)]
    write_csv(path, coord_names(grid.model.state_dim) + ["action_index", "action_value", "boundary"],
              rows)
