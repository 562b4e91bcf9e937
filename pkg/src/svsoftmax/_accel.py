"""Backend selection for the compiled kernels.

Set ``SVSOFTMAX_DISABLE_NUMBA=1`` to force the pure-numpy path. The numba
path is also skipped when numba cannot be imported.
"""

import os

_FLAG = "SVSOFTMAX_DISABLE_NUMBA"

try:
    import numba as _numba
except ImportError:  # pragma: no cover - depends on the environment
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get(_FLAG, "0").lower() not in ("1", "true", "yes")
BACKEND = "numba" if USE_NUMBA else "numpy"

# fastmath stays off: reductions must be reproducible bit for bit.
JIT_OPTIONS = dict(cache=True, nogil=True, fastmath=False, error_model="numpy")


def njit(func):
    """Compile ``func`` with numba if available, else return it unchanged."""
    if not HAVE_NUMBA:
        return func
    return _numba.njit(**JIT_OPTIONS)(func)
