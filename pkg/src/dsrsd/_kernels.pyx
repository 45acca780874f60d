# cython: language_level=3
"""Compiled versions of the kernels in ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport erf, exp, log

cnp.import_array()

cdef double INV_SQRT2 = 0.7071067811865476
cdef double INV_SQRT_2PI = 0.3989422804014327


def gelu(x):
    flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    out = np.empty(flat.shape[0], dtype=np.float64)
    cdef const double[::1] xv = flat
    cdef double[::1] ov = out
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double v
    with nogil:
        for i in range(n):
            v = xv[i]
            ov[i] = 0.5 * v * (1.0 + erf(v * INV_SQRT2))
    return out.reshape(np.shape(x))


def gelu_grad(x):
    flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
    out = np.empty(flat.shape[0], dtype=np.float64)
    cdef const double[::1] xv = flat
    cdef double[::1] ov = out
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double v
    with nogil:
        for i in range(n):
            v = xv[i]
            ov[i] = 0.5 * (1.0 + erf(v * INV_SQRT2)) + v * INV_SQRT_2PI * exp(-0.5 * v * v)
    return out.reshape(np.shape(x))


cdef void _row_max_sum(const double[:, ::1] xv, double[:, ::1] ov, Py_ssize_t r,
                       double* mx, double* total) noexcept nogil:
    cdef Py_ssize_t j, m = xv.shape[1]
    cdef double hi = xv[r, 0], acc = 0.0, e
    for j in range(1, m):
        if xv[r, j] > hi:
            hi = xv[r, j]
    for j in range(m):
        e = exp(xv[r, j] - hi)
        ov[r, j] = e
        acc += e
    mx[0] = hi
    total[0] = acc


def softmax_rows(x):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty((xv.shape[0], xv.shape[1]), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t r, j
    cdef double hi, total
    if xv.shape[1] == 0:
        return out
    with nogil:
        for r in range(xv.shape[0]):
            _row_max_sum(xv, ov, r, &hi, &total)
            for j in range(xv.shape[1]):
                ov[r, j] = ov[r, j] / total
    return out


def log_softmax_rows(x):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty((xv.shape[0], xv.shape[1]), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t r, j
    cdef double hi, total, lse
    if xv.shape[1] == 0:
        return out
    with nogil:
        for r in range(xv.shape[0]):
            _row_max_sum(xv, ov, r, &hi, &total)
            lse = log(total)
            for j in range(xv.shape[1]):
                ov[r, j] = (xv[r, j] - hi) - lse
    return out


def positive_rank_sum(sorted_scores, sorted_labels):
    cdef const double[::1] s = np.ascontiguousarray(sorted_scores, dtype=np.float64)
    cdef const long long[::1] y = np.ascontiguousarray(sorted_labels, dtype=np.int64)
    cdef Py_ssize_t n = s.shape[0], i = 0, j, k
    cdef double mid, total = 0.0
    cdef long long npos
    with nogil:
        while i < n:
            j = i + 1
            while j < n and s[j] == s[i]:
                j += 1
            mid = 0.5 * ((i + 1) + j)
            npos = 0
            for k in range(i, j):
                if y[k] == 1:
                    npos += 1
            total += npos * mid
            i = j
    return total
