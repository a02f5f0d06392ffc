"""Kernel backend selection.

The hot numeric kernels exist twice: a numba ``@njit`` build in
``slnn.kernels.numba_impl`` and a vectorized pure-numpy build in
``slnn.kernels.numpy_impl``.  Which one the package uses is decided once,
at import time:

* ``SLNN_BACKEND=numpy`` forces the pure-numpy path.
* ``SLNN_BACKEND=numba`` forces the numba path (fails loudly if numba is
  unusable).
* unset: numba if it imports and JIT is not disabled, numpy otherwise.

``SLAG_THREADS`` caps internal parallelism; it is applied to numba's
thread pool when the numba path is active.
"""

import os

_ENV_BACKEND = "SLNN_BACKEND"
_ENV_THREADS = "SLAG_THREADS"


def thread_cap():
    """Return the SLAG_THREADS cap as an int, or None when unset/invalid."""
    raw = os.environ.get(_ENV_THREADS)
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        return None
    return n if n >= 1 else None


def _numba_usable():
    try:
        import numba
    except ImportError:
        return False
    # Respect numba's own kill switch: jitted loops interpreted in pure
    # Python are far slower than the numpy fallback.
    if getattr(numba.config, "DISABLE_JIT", 0):
        return False
    return True


def _select():
    requested = os.environ.get(_ENV_BACKEND, "").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        if not _numba_usable():
            raise RuntimeError(
                "SLNN_BACKEND=numba but numba is not importable or JIT is disabled"
            )
        return "numba"
    if requested:
        raise RuntimeError(
            f"unknown {_ENV_BACKEND}={requested!r}; expected 'numba' or 'numpy'"
        )
    return "numba" if _numba_usable() else "numpy"


BACKEND = _select()
USE_NUMBA = BACKEND == "numba"

if USE_NUMBA:
    cap = thread_cap()
    if cap is not None:
        import numba

        numba.set_num_threads(min(cap, numba.config.NUMBA_NUM_THREADS))
