"""Dense float64 matrix kernels.

A "matrix" throughout the package is a 2-D, C-ordered ``numpy.float64``
array with at least one row and one column and only finite entries.
:func:`as_matrix` enforces that and is the gate every public routine uses.
"""
from __future__ import annotations

import numpy as np

from . import _backend

MAX_SVD_SWEEPS = 100
SVD_TOL = 1e-12
MAX_SVD_DIM = 64


class MatrixError(ValueError):
    """Malformed matrix or incompatible shapes."""


class SVDConvergenceError(ArithmeticError):
    def __init__(self, sweeps: int, residual: float):
        super().__init__(
            f"Jacobi SVD did not converge after {sweeps} sweeps "
            f"(residual off-diagonal {residual:.3e})"
        )
        self.sweeps = sweeps
        self.residual = residual


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    m = np.ascontiguousarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise MatrixError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise MatrixError(f"{name} must have at least one row and column, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise MatrixError(f"{name} contains non-finite entries")
    return m


def matmul(lhs, rhs) -> np.ndarray:
    lhs = as_matrix(lhs, "lhs")
    rhs = as_matrix(rhs, "rhs")
    if lhs.shape[1] != rhs.shape[0]:
        raise MatrixError(
            f"cannot multiply {lhs.shape[0]}x{lhs.shape[1]} by {rhs.shape[0]}x{rhs.shape[1]}"
        )
    out = lhs @ rhs
    if not np.all(np.isfinite(out)):
        raise MatrixError("matrix product overflowed")
    return out


def transpose(m) -> np.ndarray:
    return np.ascontiguousarray(as_matrix(m).T)


def l1_norm(m) -> float:
    return float(np.sum(np.abs(as_matrix(m))))


def fro_norm(m) -> float:
    m = as_matrix(m)
    scale = float(np.max(np.abs(m)))
    if scale == 0.0:
        return 0.0
    # scaling avoids under/overflow in the squares; sorting fixes the summation
    # order so that fro_norm(m.T) == fro_norm(m) bit-exactly
    return scale * float(np.sqrt(np.sum(np.sort(np.square(m / scale), axis=None))))


def elementwise_sign(m) -> np.ndarray:
    return np.sign(as_matrix(m))


def svd(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``m = u @ diag(s) @ vt`` via one-sided Jacobi.

    Singular values are returned in descending order. Raises
    :class:`SVDConvergenceError` if the sweep cap is hit.
    """
    m = as_matrix(m)
    rows, cols = m.shape
    if min(rows, cols) > MAX_SVD_DIM:
        raise MatrixError(f"SVD limited to min(rows, cols) <= {MAX_SVD_DIM}, got {m.shape}")
    wide = cols > rows
    work = m.T if wide else m
    # normalize so column norms neither underflow nor overflow inside the kernel
    scale = float(np.max(np.abs(work)))
    if scale > 0.0:
        work = np.ascontiguousarray(work / scale)
    u, s, vt, sweeps, off = _backend.jacobi_svd(work, MAX_SVD_SWEEPS, SVD_TOL)
    if scale > 0.0:
        s = s * scale
    if sweeps >= MAX_SVD_SWEEPS and off > SVD_TOL:
        raise SVDConvergenceError(sweeps, off)
    order = np.argsort(-s, kind="stable")
    u, s, vt = u[:, order], s[order], vt[order, :]
    if wide:
        u, vt = vt.T, u.T
    return np.ascontiguousarray(u), s, np.ascontiguousarray(vt)


def singular_values(m) -> np.ndarray:
    return svd(m)[1]


def nuclear_norm(m) -> float:
    return float(np.sum(singular_values(m)))
