"""Backend selection for the compiled kernels.

Set ``BLADESEG_BACKEND=numpy`` to run every kernel through its pure-numpy
path (useful when numba is missing or when debugging).  The default is
``numba`` whenever it imports.
"""

import os

BACKEND_ENV = "BLADESEG_BACKEND"

try:
    import numba as _nb
except ImportError:  # pragma: no cover - numba is a hard dep in practice
    _nb = None

_requested = os.environ.get(BACKEND_ENV, "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"{BACKEND_ENV} must be 'numba' or 'numpy', got {_requested!r}")

HAS_NUMBA = _nb is not None
USE_NUMBA = HAS_NUMBA and _requested == "numba"
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise.

    The kernels stay importable without numba so the loop versions can be
    exercised (slowly) against the numpy versions in tests.
    """
    if HAS_NUMBA:
        kwargs.setdefault("cache", True)
        # kernels drop the GIL so thread pools in generation/eval scale
        kwargs.setdefault("nogil", True)
        return _nb.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda func: func
