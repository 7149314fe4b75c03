"""Optional numba acceleration.

Set ``SVPIOLA_NUMBA=0`` before import to force the pure-numpy code paths.
``SVPIOLA_THREADS`` caps the numba thread pool (0 or unset = numba default).
"""
import os
import warnings

_flag = os.environ.get("SVPIOLA_NUMBA", "1").strip().lower()
USE_NUMBA = _flag not in ("0", "false", "no", "off")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    USE_NUMBA = False

if USE_NUMBA:
    # an old system TBB only makes numba fall back to another threading layer
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    njit = numba.njit
    prange = numba.prange

    _threads = int(os.environ.get("SVPIOLA_THREADS", "0") or 0)
    if _threads > 0:
        numba.set_num_threads(min(_threads, numba.config.NUMBA_NUM_THREADS))
else:
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func
        return decorator

    prange = range
