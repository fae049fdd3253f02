"""Hot kernels with a numba implementation and a pure-numpy fallback.

The backend is chosen once at import from ``KICKRATCHET_BACKEND``
(``numba``, the default, or ``numpy``).  Both backends consume identical
counter-based random streams, so they agree up to libm rounding.
"""
import importlib
import logging
import os

BACKEND_ENV = "KICKRATCHET_BACKEND"
_NAMES = ("evolve_points", "ulam_block", "damp_quadrant", "dissipate_rk4")
log = logging.getLogger(__name__)

# skip numba's probe of the system TBB, which warns on older installs
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")


def load(name):
    """Return the kernel module for backend ``name``."""
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    return importlib.import_module(f"{__name__}._{name}")


def _select():
    name = os.environ.get(BACKEND_ENV, "numba").strip().lower() or "numba"
    if name == "numba":
        try:
            return "numba", load("numba")
        except ImportError:
            log.warning("numba unavailable; falling back to numpy kernels")
            return "numpy", load("numpy")
    return name, load(name)


BACKEND, _module = _select()
evolve_points = _module.evolve_points
ulam_block = _module.ulam_block
damp_quadrant = _module.damp_quadrant
dissipate_rk4 = _module.dissipate_rk4

__all__ = ["BACKEND", "BACKEND_ENV", "load", *_NAMES]
