"""Backend switch for the compiled kernels.

``PYRCPD_NUMBA=0`` forces the pure-numpy path; any other value (or unset)
uses numba when it imports cleanly.
"""
import os

_flag = os.environ.get("PYRCPD_NUMBA", "1").strip().lower()
USE_NUMBA = _flag not in ("0", "false", "no", "off")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

if not USE_NUMBA:

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def backend():
    return "numba" if USE_NUMBA else "numpy"
