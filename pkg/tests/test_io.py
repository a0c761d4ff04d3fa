import json

import numpy as np

from pdmpctl import io
from pdmpctl.onestage import FeedbackSelector


def test_non_finite_values_become_strings():
    d = io.to_jsonable({"a": np.inf, "b": -np.inf, "c": np.nan, "d": np.float32(0.5),
                        "e": np.arange(2), "f": np.bool_(True)})
    assert d == {"a": "inf", "b": "-inf", "c": "nan", "d": 0.5, "e": [0, 1], "f": True}


def test_dumps_is_sorted_and_round_trips(tmp_path):
    obj = {"z": 0.1 + 0.2, "a": [1, 2.5]}
    text = io.dumps(obj)
    assert text.index('"a"') < text.index('"z"')
    p = tmp_path / "sub" / "x.json"
    io.write_json(p, obj)
    assert io.read_json(p)["z"] == 0.1 + 0.2
    assert p.read_text() == text


def test_csv_floats_round_trip(tmp_path):
    p = tmp_path / "t.csv"
    io.write_csv(p, ["a", "b"], [[1 / 3, True], [np.float64(2.5), 7]])
    lines = p.read_text().splitlines()
    assert lines[0] == "a,b"
    assert float(lines[1].split(",")[0]) == 1 / 3
    assert lines[2] == "2.5,7"


def test_grid_function_and_selector_tables(tmp_path, bench_a):
    g = bench_a.grid
    io.write_grid_function(tmp_path / "v.csv", g, np.arange(g.n_interior, dtype=float))
    rows = (tmp_path / "v.csv").read_text().splitlines()
    assert rows[0] == "x,value" and len(rows) == g.n_interior + 1
    sel = FeedbackSelector.constant(g, 2)
    io.write_selector(tmp_path / "s.csv", sel)
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "x,action_index,action_value,boundary"
    assert len(rows) == 1 + g.n_interior + g.n_boundary
    assert rows[-1].endswith(",2,1.5,1")
    assert io.coord_names(3) == ["x0", "x1", "x2"]
