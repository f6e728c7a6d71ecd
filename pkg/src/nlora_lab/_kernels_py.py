"""Pure-numpy fallback for the compiled kernels in ``_kernels.pyx``.

Both modules expose the same two functions with the same contracts; the
package picks one at import time (see ``nlora_lab._backend``).
"""
import numpy as np


def jacobi_svd(a, max_sweeps, tol):
    """One-sided (Hestenes) Jacobi SVD of a tall matrix.

    ``a`` must be C-contiguous float64 with rows >= cols. Returns
    ``(u, s, vt, sweeps, off)`` where ``off`` is the largest normalized
    column inner product seen in the final sweep (0 once converged). Singular values are
    unsorted; the caller orders them.
    """
    u = np.array(a, dtype=np.float64, order="F", copy=True)
    m, n = u.shape
    v = np.eye(n, order="F")
    # negligible columns (below tol * initial Frobenius norm) are never rotated
    floor = (tol * np.sqrt(np.sum(u * u))) ** 2
    sweeps = 0
    off = 0.0
    for sweeps in range(1, max_sweeps + 1):
        off = 0.0
        rotated = False
        for p in range(n - 1):
            up = u[:, p]
            for q in range(p + 1, n):
                uq = u[:, q]
                alpha = up @ up
                beta = uq @ uq
                gamma = up @ uq
                norm = np.sqrt(alpha * beta)
                if norm <= floor or abs(gamma) <= tol * norm:
                    continue
                off = max(off, abs(gamma) / norm)
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                tmp = c * up - s * uq
                uq[:] = s * up + c * uq
                up[:] = tmp
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
                rotated = True
        if not rotated:
            break
    sigma = np.sqrt(np.sum(u * u, axis=0))
    nz = sigma > 0.0
    u[:, nz] /= sigma[nz]
    return np.ascontiguousarray(u), sigma, np.ascontiguousarray(v.T), sweeps, off


def count_collisions(w1, w2, eps):
    """Number of positions where both ``|w1| > eps`` and ``|w2| > eps``."""
    return int(np.count_nonzero((np.abs(w1) > eps) & (np.abs(w2) > eps)))
