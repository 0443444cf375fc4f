"""Backend switch for the numba-compiled kernels.

Every hot kernel in the package exists twice: an ``@njit`` version and a
plain numpy/scipy version.  The numba path is used when numba imports and
``NESTED_SPDE_DISABLE_NUMBA`` is unset (or ``0``).  Tests and the benchmark
flip between the two with :func:`use_backend`.
"""
import contextlib
import os
import warnings

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

HAVE_NUMBA = numba is not None

_disabled = os.environ.get("NESTED_SPDE_DISABLE_NUMBA", "0").strip().lower()
_backend = "numba" if HAVE_NUMBA and _disabled in ("", "0", "false", "no") else "numpy"


def backend():
    return _backend


def set_backend(name):
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not importable")
    _backend = name


@contextlib.contextmanager
def use_backend(name):
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching; identity decorator without numba."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def set_threads(n):
    """Cap the numba thread pool; a no-op without numba."""
    if HAVE_NUMBA and n is not None:
        n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
        # initialising the pool may warn about an old TBB; no kernel needs it
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", numba.NumbaWarning)
            numba.set_num_threads(n)
