"""Numba switch for the hot kernels.

Every kernel module ships two implementations of each hot loop: a
``numba.njit`` version and a pure-numpy version.  Which one the public
functions dispatch to is decided once at import time:

* ``SCANNORM_NUMBA=0`` forces the numpy path.
* otherwise numba is used when it can be imported.
"""
import logging
import os

logger = logging.getLogger(__name__)

_flag = os.environ.get("SCANNORM_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "no", "off")

try:
    import numba

    logging.getLogger("numba").setLevel(logging.WARNING)
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = _requested and HAVE_NUMBA

NJIT_KWARGS = {"cache": True, "nogil": True}


def njit(*args, **kwargs):
    """``numba.njit`` with project defaults, or a no-op when numba is absent.

    Kernels are always decorated so both paths can be tested side by side;
    ``USE_NUMBA`` only controls which path the public API selects.
    """
    opts = dict(NJIT_KWARGS)
    opts.update(kwargs)

    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

    if args and callable(args[0]):
        return numba.njit(**opts)(args[0])
    return numba.njit(*args, **opts)


def pick(numba_impl, numpy_impl):
    return numba_impl if USE_NUMBA else numpy_impl
