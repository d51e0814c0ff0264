"""Backend selection for the hot kernels.

The compiled ``_kernels`` extension is used when importable; otherwise (or
when ``SCOOTER_NAV_PURE_PYTHON`` is set to a non-empty value other than
``0``) the numpy/LAPACK fallback in ``_fallback`` is used.
"""
from __future__ import annotations

import os

from . import _fallback

_force_python = os.environ.get("SCOOTER_NAV_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_python:
        raise ImportError("pure-python backend requested")
    from . import _kernels as _impl
    BACKEND = "compiled"
except ImportError:
    _impl = _fallback
    BACKEND = "python"

band_factor = _impl.band_factor
band_solve = _impl.band_solve
band_matvec = _impl.band_matvec
path_sdf = _impl.path_sdf
csr_matvec = _impl.csr_matvec
band_scatter = _impl.band_scatter
max_step = _impl.max_step
ipm_loop = _impl.ipm_loop


def backend_module(name: str):
    """Return the kernel module for ``"compiled"`` or ``"python"`` (for benchmarks and tests)."""
    if name == "python":
        return _fallback
    if name == "compiled":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
