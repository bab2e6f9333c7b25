"""Kernel backend selection.

The hot inner kernels (softmax, layer norm, Adam update) exist twice: a
numba-jitted version and a pure-numpy fallback. The active backend is chosen
once at import from the POSEPYRAMID_BACKEND environment variable:

    POSEPYRAMID_BACKEND=numba   force the jitted kernels (error if numba missing)
    POSEPYRAMID_BACKEND=numpy   force the pure-numpy kernels
    unset                       numba when importable, numpy otherwise

`set_backend()` switches at runtime (used by the benchmark and by tests).
Both paths are deterministic run-to-run; they are not guaranteed to agree
bitwise with each other because reduction order differs.
"""

from __future__ import annotations

import os

from . import _kernels_numpy
from .errors import ParameterError

try:
    from . import _kernels_numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - depends on environment
    _kernels_numba = None
    NUMBA_AVAILABLE = False

_KERNEL_NAMES = (
    "softmax_fwd",
    "softmax_bwd",
    "layernorm_fwd",
    "layernorm_bwd",
    "adam_update",
)

_active_name = None
_table = {}


def set_backend(name: str) -> None:
    """Select the kernel backend: "numba" or "numpy"."""
    global _active_name, _table
    if name == "numba":
        if not NUMBA_AVAILABLE:
            raise ParameterError("numba backend requested but numba is not importable")
        src = _kernels_numba
    elif name == "numpy":
        src = _kernels_numpy
    else:
        raise ParameterError(f"unknown backend {name!r}, expected 'numba' or 'numpy'")
    _table = {k: getattr(src, k) for k in _KERNEL_NAMES}
    _active_name = name


def backend_name() -> str:
    return _active_name


def kernel(name: str):
    return _table[name]


_env = os.environ.get("POSEPYRAMID_BACKEND", "").strip().lower()
if _env:
    set_backend(_env)
else:
    set_backend("numba" if NUMBA_AVAILABLE else "numpy")
