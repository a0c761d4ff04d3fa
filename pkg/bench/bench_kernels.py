"""Time the numba kernels against their numpy twins.

    python bench/bench_kernels.py [--repeat 5]

Prints the median wall time of each implementation on problem sizes taken
from the built-in models (99 paths x 100 intervals x 4 actions for the
backward sweep, 50k lookups into 500 tabulated hazards for the search), and
checks the two implementations agree.
"""
import argparse
import time

import numpy as np

from pdmpctl.kernels import (
    backward_induction_numba,
    backward_induction_numpy,
    segment_search_numba,
    segment_search_numpy,
)


def _median_time(fn, args, repeat):
    fn(*args)  # warm-up, includes compilation for numba
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def sweep_case(rng, P=99, N=100, A=4):
    stage = rng.random((P, N, A))
    decay = rng.uniform(0.5, 1.0, (P, N, A))
    return stage, decay, rng.random(P)


def search_case(rng, n_seg=500, length=401, n=50_000):
    inc = rng.exponential(0.01, (n_seg, length - 1))
    table = np.concatenate([np.zeros((n_seg, 1)), np.cumsum(inc, axis=1)], axis=1).ravel()
    offsets = np.arange(n_seg + 1, dtype=np.int64) * length
    seg = rng.integers(0, n_seg, n)
    target = rng.uniform(0, 4.0, n)
    return offsets, table, seg, target


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    rows = []
    for name, case, f_np, f_nb in (
        ("backward_induction", sweep_case(rng), backward_induction_numpy, backward_induction_numba),
        ("segment_search", search_case(rng), segment_search_numpy, segment_search_numba),
    ):
        a = f_np(*case)
        b = f_nb(*case)
        if isinstance(a, tuple):
            same = all(np.array_equal(x, y) for x, y in zip(a, b))
        else:
            same = bool(np.array_equal(a, b))
        t_np = _median_time(f_np, case, args.repeat)
        t_nb = _median_time(f_nb, case, args.repeat)
        rows.append((name, t_np, t_nb, t_np / t_nb, same))
    print(f"{'kernel':<20}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}  agree")
    for name, t_np, t_nb, sp, same in rows:
        print(f"{name:<20}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{sp:>10.1f}  {same}")
    return rows


if __name__ == "__main__":
    main()
