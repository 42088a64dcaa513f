"""Hot interpolation kernels.

The compiled Cython core is used when it was built; otherwise the NumPy
fallback is selected at import. ``use_backend("numpy")`` switches to the
fallback at run time.
"""

import importlib
import logging

import numpy as np

from . import _fallback
from .design import farrow_coefficients, kaiser_sinc, lagrange_cubic, sinc_table

log = logging.getLogger(__name__)

try:
    _core = importlib.import_module(f"{__name__}._core")
except ImportError:  # extension not built
    log.debug("compiled kernels unavailable, using NumPy fallback")
    _core = None

BACKEND = "cython" if _core is not None else "numpy"
_impl = _core if _core is not None else _fallback


def use_backend(name: str) -> str:
    """Select ``"cython"`` or ``"numpy"`` kernels and return the previous choice."""
    global BACKEND, _impl
    if name not in ("cython", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "cython" and _core is None:
        raise RuntimeError("compiled kernels are not built")
    previous = BACKEND
    BACKEND = name
    _impl = _core if name == "cython" else _fallback
    return previous


def sinc_interp(x, pos, table=None):
    """Evaluate ``x`` at fractional positions ``pos`` with a windowed sinc."""
    if table is None:
        table = sinc_table()
    return _impl.sinc_interp(
        np.ascontiguousarray(x, dtype=np.complex128),
        np.ascontiguousarray(pos, dtype=np.float64),
        np.ascontiguousarray(table, dtype=np.float64),
    )


def farrow(x, coeffs, start, step, n_out):
    """Farrow interpolation at positions ``start + m * step``, ``m < n_out``."""
    return _impl.farrow(
        np.ascontiguousarray(x, dtype=np.complex128),
        np.ascontiguousarray(coeffs, dtype=np.float64),
        float(start),
        float(step),
        int(n_out),
    )


__all__ = [
    "BACKEND",
    "farrow",
    "farrow_coefficients",
    "kaiser_sinc",
    "lagrange_cubic",
    "sinc_interp",
    "sinc_table",
    "use_backend",
]
