# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: one-sided Jacobi SVD and collision counting.

Mirrors ``_kernels_py`` function for function.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, copysign

cnp.import_array()


def jacobi_svd(a, int max_sweeps, double tol):
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="fortran"] u = np.array(
        a, dtype=np.float64, order="F", copy=True)
    cdef Py_ssize_t m = u.shape[0]
    cdef Py_ssize_t n = u.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="fortran"] v = np.eye(n, order="F")
    cdef double[::1, :] U = u
    cdef double[::1, :] V = v
    cdef double alpha, beta, gamma, norm, zeta, t, c, s, x, y, floor, total, off
    cdef Py_ssize_t i, p, q
    cdef int sweeps = 0
    cdef bint rotated

    total = 0.0
    for q in range(n):
        for i in range(m):
            total += U[i, q] * U[i, q]
    floor = (tol * sqrt(total)) ** 2
    off = 0.0
    while sweeps < max_sweeps:
        sweeps += 1
        off = 0.0
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    alpha += U[i, p] * U[i, p]
                    beta += U[i, q] * U[i, q]
                    gamma += U[i, p] * U[i, q]
                norm = sqrt(alpha * beta)
                if norm <= floor or fabs(gamma) <= tol * norm:
                    continue
                if fabs(gamma) / norm > off:
                    off = fabs(gamma) / norm
                zeta = (beta - alpha) / (2.0 * gamma)
                t = copysign(1.0, zeta) / (fabs(zeta) + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    x = U[i, p]
                    y = U[i, q]
                    U[i, p] = c * x - s * y
                    U[i, q] = s * x + c * y
                for i in range(n):
                    x = V[i, p]
                    y = V[i, q]
                    V[i, p] = c * x - s * y
                    V[i, q] = s * x + c * y
                rotated = True
        if not rotated:
            break

    sigma = np.sqrt(np.sum(u * u, axis=0))
    nz = sigma > 0.0
    u[:, nz] /= sigma[nz]
    return np.ascontiguousarray(u), sigma, np.ascontiguousarray(v.T), sweeps, off


def count_collisions(w1, w2, double eps):
    cdef const double[::1] x = np.ascontiguousarray(w1, dtype=np.float64).ravel()
    cdef const double[::1] y = np.ascontiguousarray(w2, dtype=np.float64).ravel()
    cdef Py_ssize_t i, n = x.shape[0]
    cdef long count = 0
    if y.shape[0] != n:
        raise ValueError("shape mismatch")
    # branch-free: supports are random, so a data-dependent branch mispredicts often
    for i in range(n):
        count += (fabs(x[i]) > eps) & (fabs(y[i]) > eps)
    return count
