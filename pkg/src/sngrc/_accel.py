"""Backend switch for the compiled kernels.

Set ``SNGRC_NO_NUMBA=1`` in the environment before importing :mod:`sngrc` to
run every hot kernel through its pure-numpy implementation instead of the
numba-compiled loop.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_REQUESTED = os.environ.get("SNGRC_NO_NUMBA", "0").strip().lower() in _FALSY
USE_NUMBA = NUMBA_REQUESTED and _numba is not None
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(func):
    """Compile ``func`` with ``numba.njit`` when available, else return it unchanged.

    The undecorated function is kept on ``.py_func`` in both cases so tests can
    exercise the loop body as plain Python.
    """
    if _numba is None:
        func.py_func = func
        return func
    return _numba.njit(cache=True, nogil=True)(func)
