"""Optional numba acceleration.

Kernels are written in nopython-compatible numpy style, so when numba is
absent (or SURVEYCAST_NO_NUMBA=1 is set) the same functions run as plain
Python/numpy with identical semantics.
"""

import os

if os.environ.get("SURVEYCAST_NO_NUMBA"):
    HAVE_NUMBA = False
else:
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:
        HAVE_NUMBA = False

if HAVE_NUMBA:
    from numba import njit
else:
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap
