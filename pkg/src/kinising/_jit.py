"""Optional numba acceleration.

Set ``KINISING_DISABLE_JIT=1`` to run every kernel as plain Python on numpy
arrays.  The flag is read once at import time.
"""

import os

_FLAG = os.environ.get("KINISING_DISABLE_JIT", "").strip().lower()
JIT_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

HAS_NUMBA = _numba is not None
USE_JIT = HAS_NUMBA and not JIT_DISABLED


def compile_kernel(func):
    """Return a compiled version of ``func`` (or ``func`` itself without numba)."""
    if not HAS_NUMBA:
        return func
    return _numba.njit(cache=True, nogil=True)(func)


def kernel(func):
    """Decorator: attach ``func.py`` (pure Python) and ``func.jit`` (compiled).

    The returned callable is the variant selected by the environment flag.
    """
    jitted = compile_kernel(func)
    chosen = jitted if USE_JIT else func
    try:
        chosen.py = func
        chosen.jit = jitted
    except AttributeError:  # numba dispatchers may refuse attributes
        pass
    return chosen
