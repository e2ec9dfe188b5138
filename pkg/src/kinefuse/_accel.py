"""Optional numba acceleration.

Hot kernels are written twice: a numba ``@njit`` version with explicit loops
and a vectorised numpy version. ``USE_NUMBA`` picks which one the public API
dispatches to. Set ``KINEFUSE_DISABLE_NUMBA=1`` to force the numpy path (numba
missing has the same effect).
"""
import os
import warnings

_DISABLED = os.environ.get("KINEFUSE_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


def njit(*args, **kwargs):
    """``numba.njit(cache=True, ...)`` when numba is importable, else identity."""
    kwargs.setdefault("cache", True)

    def decorator(func):
        if not HAVE_NUMBA:
            return func
        return numba.njit(**kwargs)(func)

    if len(args) == 1 and callable(args[0]):
        return decorator(args[0])
    return decorator


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


if not HAVE_NUMBA and not _DISABLED:  # pragma: no cover
    warnings.warn("numba not available; using the pure-numpy kernels", RuntimeWarning)
