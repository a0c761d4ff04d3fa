"""Numba switch.

Hot kernels are written once as plain Python loops and compiled with numba
when it is importable and ``PDMPCTL_NUMBA`` is not set to ``0``.  Every
compiled kernel has a pure-numpy twin; :mod:`pdmpctl.kernels` picks one at
import time.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_flag = os.environ.get("PDMPCTL_NUMBA", "1").strip().lower()
USE_NUMBA = numba is not None and _flag not in ("0", "false", "no", "off")

numba_default = {
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "boundscheck": False,
}


def njit(func):
    """Compile ``func`` with the package defaults, or return it unchanged."""
    if numba is None:
        return func
    return numba.njit(**numba_default)(func)
