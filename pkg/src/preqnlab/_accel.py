"""Backend switch for the compiled kernels.

Hot loops (per-sample backprop, the single-table Bellman backup, sampled
Q-learning) have a numba implementation and a numpy one. The numba path is
used when numba imports and ``PREQNLAB_DISABLE_NUMBA`` is unset or ``0``.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

DISABLED_BY_ENV = os.environ.get("PREQNLAB_DISABLE_NUMBA", "").strip().lower() not in _FALSY

USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV

numba_opts = {
    "nopython": True,
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "boundscheck": False,
}


def njit(func):
    """Compile ``func`` with numba if available, else return it unchanged.

    The compiled function is only dispatched to when ``USE_NUMBA`` is true;
    wrapping unconditionally lets tests and the benchmark call both paths.
    """
    if not HAVE_NUMBA:
        return func
    return numba.jit(**numba_opts)(func)


def backend():
    return "numba" if USE_NUMBA else "numpy"
