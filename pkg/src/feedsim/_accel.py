"""Optional numba acceleration.

Hot kernels are written once in a numba-compatible subset of Python and
decorated with :func:`jit`.  Setting ``FEEDSIM_DISABLE_NUMBA=1`` (or having no
numba installed) turns the decorator into a no-op, and callers switch to the
vectorised numpy implementations instead of running the loops interpreted.
"""
import os

_disabled = os.environ.get("FEEDSIM_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:  # pragma: no cover - import guard
    if _disabled:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def jit(*args, **kwargs):
    """``numba.njit(cache=True, nogil=True)`` when available, identity otherwise."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        kwargs.setdefault("nogil", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def use_numba(backend=None):
    """Resolve a backend request (``None``, ``"numba"``, ``"numpy"``) to a bool."""
    if backend is None:
        return HAVE_NUMBA
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable or disabled")
        return True
    if backend == "numpy":
        return False
    raise ValueError(f"unknown backend {backend!r}")
