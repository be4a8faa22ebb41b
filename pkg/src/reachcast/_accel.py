"""Backend selection for the hot kernels.

Every hot kernel in this package exists in two forms: a numba ``@njit``
build and a pure-numpy fallback.  Setting ``REACHCAST_NUMBA=0`` in the
environment selects the fallback at import time (useful on platforms where
numba is unavailable, and for benchmarking one backend against the other).
Both backends draw randomness through the same counter-based generator, so
they produce identical integer outputs (cascades, walks, counts).
"""

import os


def _env_wants_numba() -> bool:
    value = os.environ.get("REACHCAST_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "no", "off")


NUMBA_ENABLED = False
if _env_wants_numba():
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    from numba import njit, prange
else:
    njit = None
    prange = range


def hot(**numba_options):
    """Decorator for single-body kernels: compile with numba when the numba
    backend is active, otherwise leave the function as plain Python.

    Bodies must be valid in both modes; callers on the fallback path wrap
    invocations in ``np.errstate(over="ignore")`` because the counter RNG
    relies on wrapping uint64 arithmetic.
    """

    def wrap(func):
        if NUMBA_ENABLED:
            return njit(**numba_options)(func)
        return func

    return wrap


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
