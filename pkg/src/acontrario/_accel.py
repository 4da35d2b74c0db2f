"""Switch between numba-compiled kernels and the pure-numpy fallback.

Set ``ACONTRARIO_DISABLE_NUMBA=1`` in the environment before import to force
the numpy path (useful for debugging, or on platforms without numba).
"""

import os
import warnings

_DISABLED = os.environ.get("ACONTRARIO_DISABLE_NUMBA", "").strip().lower() in (
    "1", "true", "yes", "on",
)

try:
    from numba import njit, prange
    from numba.core.errors import NumbaWarning
    # optional threading-layer notices are irrelevant for these kernels
    warnings.filterwarnings("ignore", message=".*TBB.*", category=NumbaWarning)
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return decorator

    def prange(*args):
        return range(*args)

USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED


def backend():
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return "numba" if USE_NUMBA else "numpy"
