"""Backend selection for the hot kernels.

Set ``SABRNET_DISABLE_NUMBA=1`` before import to force the pure-numpy path.
"""

import os

_FLAG = os.environ.get("SABRNET_DISABLE_NUMBA", "").strip().lower()

if _FLAG in ("1", "true", "yes", "on"):
    HAS_NUMBA = False
else:
    try:
        import numba  # noqa: F401

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover
        HAS_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        import numba

        return numba.njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(fn):
        return fn

    return wrap


BACKEND = "numba" if HAS_NUMBA else "numpy"
