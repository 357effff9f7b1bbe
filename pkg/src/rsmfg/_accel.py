"""Numba switch.

Set ``RSMFG_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when numba
is installed.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

_DISABLED = os.environ.get("RSMFG_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")
HAVE_NUMBA = numba is not None and not _DISABLED

if numba is not None and "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is often too old and numba warns on every launch
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


def njit(*args, **kwargs):
    if numba is None:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def default_backend():
    return "numba" if HAVE_NUMBA else "numpy"


def set_threads(n):
    """Cap numba worker threads; a falsy ``n`` restores the default."""
    if numba is None:
        return
    top = numba.config.NUMBA_NUM_THREADS
    numba.set_num_threads(max(1, min(int(n), top)) if n else top)
