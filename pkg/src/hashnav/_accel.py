"""JIT switch for the numeric kernels.

Set ``HASHNAV_DISABLE_NUMBA=1`` (or numba's own ``NUMBA_DISABLE_JIT=1``)
to route every kernel through its pure-numpy twin. The flag is read once,
at import time. The jitted variants stay importable either way so the
benchmark can compare both paths in one process.
"""
import os

_FALSY = ("", "0", "false", "no", "off")

try:
    import numba
    HAVE_NUMBA = os.environ.get("NUMBA_DISABLE_JIT", "").lower() in _FALSY
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and \
    os.environ.get("HASHNAV_DISABLE_NUMBA", "").lower() in _FALSY

numba_default = {
    "nogil": True,
    "cache": True,
    "fastmath": False,
    "boundscheck": False,
}


def njit(func):
    """Compile ``func`` with numba when it is importable, else return None."""
    if not HAVE_NUMBA:
        return None
    return numba.njit(**numba_default)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
