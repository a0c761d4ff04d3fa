"""Hot numeric kernels with numba and pure-numpy implementations.

``backward_induction`` drives every one-stage sweep (value iteration calls it
once per iteration) and ``segment_search`` drives jump-time inversion in the
simulator.  The public names dispatch on :data:`pdmpctl._accel.USE_NUMBA`;
the ``*_numpy`` and ``*_numba`` variants stay importable so tests and
``bench/bench_kernels.py`` can compare them directly.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "backward_induction",
    "backward_induction_numpy",
    "backward_induction_numba",
    "segment_search",
    "segment_search_numpy",
    "segment_search_numba",
    "USE_NUMBA",
]


def backward_induction_numpy(stage, decay, terminal):
    """Minimize ``stage[k, a] + decay[k, a] * W[k + 1]`` backwards along paths.

    Parameters
    ----------
    stage, decay : ndarray, shape (P, N, A)
        Per-interval running contribution and survival-discount factor for
        each path, interval and action.  ``+inf`` in ``stage`` marks an
        infeasible action.
    terminal : ndarray, shape (P,)
        Value at the last node of each path.

    Returns
    -------
    values : ndarray, shape (P, N + 1)
        Optimal cost-to-go at every node.
    policy : ndarray of int64, shape (P, N)
        Minimizing action index per interval; ties go to the lowest index.
    """
    P, N, A = stage.shape
    values = np.empty((P, N + 1))
    policy = np.empty((P, N), dtype=np.int64)
    values[:, N] = terminal
    rows = np.arange(P)
    w = np.asarray(terminal, dtype=float)
    for k in range(N - 1, -1, -1):
        cand = stage[:, k, :] + decay[:, k, :] * w[:, None]
        best = np.argmin(cand, axis=1)
        w = cand[rows, best]
        values[:, k] = w
        policy[:, k] = best
    return values, policy


def _backward_induction_loops(stage, decay, terminal):
    P, N, A = stage.shape
    values = np.empty((P, N + 1))
    policy = np.empty((P, N), dtype=np.int64)
    for p in range(P):
        w = terminal[p]
        values[p, N] = w
        for k in range(N - 1, -1, -1):
            best = 0
            bestval = stage[p, k, 0] + decay[p, k, 0] * w
            for a in range(1, A):
                v = stage[p, k, a] + decay[p, k, a] * w
                if v < bestval:
                    bestval = v
                    best = a
            w = bestval
            values[p, k] = w
            policy[p, k] = best
    return values, policy


backward_induction_numba = njit(_backward_induction_loops)


def segment_search_numpy(offsets, table, seg, target):
    """Locate ``target`` inside nondecreasing segments of ``table``.

    Segment ``s`` occupies ``table[offsets[s]:offsets[s + 1]]``.  Returns the
    global index ``j`` with ``table[j] <= target < table[j + 1]`` inside the
    segment, clipped to the segment's last interval.
    """
    out = np.empty(len(seg), dtype=np.int64)
    for s in np.unique(seg):
        sel = seg == s
        lo, hi = offsets[s], offsets[s + 1]
        j = np.searchsorted(table[lo:hi], target[sel], side="right") - 1
        out[sel] = lo + np.clip(j, 0, hi - lo - 2)
    return out


def _segment_search_loops(offsets, table, seg, target):
    n = seg.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        lo = offsets[seg[i]]
        hi = offsets[seg[i] + 1] - 1
        v = target[i]
        # last index with table[j] <= v, within [lo, hi - 1]
        a = lo
        b = hi - 1
        if v < table[lo]:
            out[i] = lo
            continue
        while a < b:
            m = (a + b + 1) // 2
            if table[m] <= v:
                a = m
            else:
                b = m - 1
        out[i] = a
    return out


segment_search_numba = njit(_segment_search_loops)

if USE_NUMBA:
    backward_induction = backward_induction_numba
    segment_search = segment_search_numba
else:
    backward_induction = backward_induction_numpy
    segment_search = segment_search_numpy
