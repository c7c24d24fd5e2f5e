"""Kernel backend selection.

Every hot kernel in :mod:`voxport.kernels` ships in two functionally
identical flavors: a numba ``@njit`` loop and a vectorized numpy fallback.
The flavor is picked once at import time from the ``VOXPORT_BACKEND``
environment variable:

- ``VOXPORT_BACKEND=numba``  force numba (error if not installed)
- ``VOXPORT_BACKEND=numpy``  force the pure numpy fallbacks
- unset                      numba when importable, numpy otherwise
"""

import os

_requested = os.environ.get("VOXPORT_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"VOXPORT_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    NUMBA_ENABLED = False
else:
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        if _requested == "numba":
            raise RuntimeError("VOXPORT_BACKEND=numba but numba is not importable")
        NUMBA_ENABLED = False


def backend_name() -> str:
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return "numba" if NUMBA_ENABLED else "numpy"
