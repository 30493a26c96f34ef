"""Optional numba acceleration.

Kernels are written so the same source runs under ``numba.njit`` and as plain
numpy.  Set ``ELASTICPIPE_JIT=0`` to force the pure-numpy path (useful for
debugging and for the benchmark that compares both).
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional speedup
    numba = None
    HAVE_NUMBA = False


def jit_enabled() -> bool:
    flag = os.environ.get("ELASTICPIPE_JIT", "1").strip().lower()
    return HAVE_NUMBA and flag not in ("0", "false", "no", "off")


JIT_ENABLED = jit_enabled()


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, identity otherwise.

    The compiled dispatcher keeps the original function on ``.py_func`` so
    callers can always reach the numpy path.
    """
    kwargs.setdefault("cache", True)

    def wrap(func):
        if JIT_ENABLED:
            return numba.njit(**kwargs)(func)
        func.py_func = func
        return func

    if args and callable(args[0]):
        return wrap(args[0])
    return wrap
