"""Backend selection for the hot numeric kernels.

Set ``SAFETRACK_NO_NUMBA=1`` to force the pure-numpy path. ``SAFETRACK_THREADS``
caps the numba thread pool.
"""
import os

try:
    import numba

    NUMBA_INSTALLED = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    NUMBA_INSTALLED = False


def _env_flag(name):
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = NUMBA_INSTALLED and not _env_flag("SAFETRACK_NO_NUMBA")

if NUMBA_INSTALLED and os.environ.get("SAFETRACK_THREADS"):
    numba.set_num_threads(max(1, int(os.environ["SAFETRACK_THREADS"])))


def optional_njit(*args, **kwargs):
    """``numba.njit`` when available, identity otherwise."""

    def decorator(func):
        if NUMBA_INSTALLED:
            return numba.njit(*args, **kwargs)(func)
        return func

    return decorator


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
