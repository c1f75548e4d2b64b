# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. See ``_pykernels`` for the reference semantics."""
import numpy as np

from cython.parallel cimport prange
from libc.math cimport fabs
from libc.stdlib cimport malloc, free, qsort


cdef int _cmp_desc(const void* a, const void* b) noexcept nogil:
    cdef double x = (<const double*>a)[0]
    cdef double y = (<const double*>b)[0]
    if x < y:
        return 1
    if x > y:
        return -1
    return 0


def absorb(A1_, B_):
    cdef const double[:, ::1] A1 = np.ascontiguousarray(A1_, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(B_, dtype=np.float64)
    cdef Py_ssize_t M = A1.shape[0]
    cdef Py_ssize_t K = B.shape[1]
    cdef Py_ssize_t s, t, k
    cdef double a
    out = np.empty((M, K), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for s in range(M - 1, -1, -1):
            for k in range(K):
                o[s, k] = B[s, k]
            for t in range(s + 1, M):
                a = A1[s, t]
                if a != 0.0:
                    for k in range(K):
                        o[s, k] += a * o[t, k]
    return out


cdef void _sort_desc(double* buf, Py_ssize_t n) noexcept nogil:
    # insertion sort beats qsort on the short columns seen in practice
    cdef Py_ssize_t i, j
    cdef double x
    if n > 32:
        qsort(buf, n, sizeof(double), _cmp_desc)
        return
    for i in range(1, n):
        x = buf[i]
        j = i - 1
        while j >= 0 and buf[j] < x:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = x


cdef void _project_one(const double[:, ::1] V, double[:, ::1] out, Py_ssize_t col,
                       double* buf) noexcept nogil:
    cdef Py_ssize_t n = V.shape[0]
    cdef Py_ssize_t i, rho = 1
    cdef double css = 0.0, css_rho = 0.0, theta, x
    for i in range(n):
        buf[i] = V[i, col]
    _sort_desc(buf, n)
    for i in range(n):
        css += buf[i]
        if buf[i] - (css - 1.0) / (i + 1) > 0:
            rho = i + 1
            css_rho = css
    theta = (css_rho - 1.0) / rho
    for i in range(n):
        x = V[i, col] - theta
        out[i, col] = x if x > 0.0 else 0.0


def project_simplex_columns(V):
    arr = np.ascontiguousarray(V, dtype=np.float64)
    if arr.ndim == 1:
        return project_simplex_columns(arr[:, None])[:, 0]
    cdef const double[:, ::1] v = arr
    cdef Py_ssize_t n = v.shape[0]
    cdef Py_ssize_t m = v.shape[1]
    cdef Py_ssize_t j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double* buf = <double*>malloc(max(n, 1) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for j in range(m):
                _project_one(v, o, j, buf)
    finally:
        free(buf)
    return out


def weighted_l1_cdist(const double[:, ::1] X, const double[:, ::1] Y, const double[::1] w,
                      int num_threads=1):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t m = Y.shape[0]
    cdef Py_ssize_t N = X.shape[1]
    cdef Py_ssize_t i, j, v
    cdef double acc
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in prange(n, nogil=True, num_threads=num_threads, schedule="static"):
        for j in range(m):
            acc = 0.0
            for v in range(N):
                acc = acc + w[v] * fabs(X[i, v] - Y[j, v])
            o[i, j] = acc
    return out


def seal_batch(const double[:, ::1] E, const double[::1] w, const double[:, ::1] D,
               int num_threads=1):
    """Fused loop version; GEMM-bound, so the backend prefers the BLAS path."""
    cdef Py_ssize_t R = E.shape[0]
    cdef Py_ssize_t K = E.shape[1]
    cdef Py_ssize_t B = D.shape[0]
    cdef Py_ssize_t b, v, k
    cdef double z, s, loss
    losses = np.empty(B, dtype=np.float64)
    grad = np.zeros((B, K), dtype=np.float64)
    signs = np.empty((B, R), dtype=np.float64)
    cdef double[::1] lo = losses
    cdef double[:, ::1] g = grad
    cdef double[:, ::1] sg = signs
    for b in prange(B, nogil=True, num_threads=num_threads, schedule="static"):
        loss = 0.0
        for v in range(R):
            z = 0.0
            for k in range(K):
                z = z + E[v, k] * D[b, k]
            if z > 0.0:
                s = 1.0
            elif z < 0.0:
                s = -1.0
            else:
                s = 0.0
            sg[b, v] = s
            loss = loss + w[v] * fabs(z)
            if s != 0.0:
                for k in range(K):
                    g[b, k] += w[v] * s * E[v, k]
        lo[b] = loss
    return losses, grad, signs
