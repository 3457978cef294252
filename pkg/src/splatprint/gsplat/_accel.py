"""Kernel backend selection.

numba kernels are used unless ``SPLATPRINT_NO_NUMBA=1`` is set or numba is not
importable. ``SPLATPRINT_THREADS`` caps the numba thread pool.
"""

import os

from . import raster_numpy

_DISABLED = os.environ.get("SPLATPRINT_NO_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("numba disabled by SPLATPRINT_NO_NUMBA")
    import numba

    from . import raster_numba

    _threads = os.environ.get("SPLATPRINT_THREADS")
    if _threads:
        numba.set_num_threads(max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS)))
    HAVE_NUMBA = True
except ImportError:
    raster_numba = None
    HAVE_NUMBA = False

BACKENDS = {"numpy": raster_numpy}
if HAVE_NUMBA:
    BACKENDS["numba"] = raster_numba

DEFAULT_BACKEND = "numba" if HAVE_NUMBA else "numpy"


def kernels(backend=None):
    name = backend or DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}; have {sorted(BACKENDS)}") from None
