"""Kernel backend selection.

The Cython extension is used when it was built; otherwise the numpy
fallback. Set ``NLORA_LAB_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("NLORA_LAB_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        kernels = _kernels_py
        BACKEND = "python"

jacobi_svd = kernels.jacobi_svd
count_collisions = kernels.count_collisions

__all__ = ["BACKEND", "jacobi_svd", "count_collisions", "kernels"]
